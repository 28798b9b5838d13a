"""DMA-capable devices and the per-device DCA enable knob."""

from dataclasses import dataclass

from llcsim.cache_model import ALLOCATE_DCA, MEMORY_WRITE, ConfigError

DEVICE_KINDS = ("network", "storage")


class SimulationError(RuntimeError):
    """A runtime invariant of the simulation was violated."""


@dataclass(kw_only=True)
class DeviceSpec:
    id: str
    kind: str
    lines_per_epoch: int
    dca_enabled: bool = True

    def __post_init__(self):
        if self.kind not in DEVICE_KINDS:
            raise ConfigError(f"device {self.id}: kind must be one of {DEVICE_KINDS}, got {self.kind!r}")
        if not isinstance(self.lines_per_epoch, int) or self.lines_per_epoch < 0:
            raise ConfigError(f"device {self.id}: lines_per_epoch must be >= 0")


@dataclass(frozen=True)
class DmaBatch:
    device: str
    addrs: tuple
    epoch_issued: int


@dataclass
class DmaResult:
    outcomes: list
    leak_events: list
    dca_allocations: int = 0
    memory_writes: int = 0


class DeviceTable:
    """Owns the runtime device state and enforces per-epoch pacing."""

    def __init__(self, devices, model=None):
        self.devices = {}
        for d in devices:
            if d.id in self.devices:
                raise ConfigError(f"duplicate device {d.id!r}")
            # runtime copy: the DCA flag flips, the scenario's spec must not
            self.devices[d.id] = DeviceSpec(id=d.id, kind=d.kind,
                                            lines_per_epoch=d.lines_per_epoch,
                                            dca_enabled=d.dca_enabled)
        self._issued = {}
        if model is not None:
            for did in self.devices:
                model.register_device(did)

    def __getitem__(self, did):
        try:
            return self.devices[did]
        except KeyError:
            raise ConfigError(f"unknown device {did!r}") from None

    def __iter__(self):
        return iter(self.devices.values())

    def set_dca_enabled(self, did, flag):
        self[did].dca_enabled = bool(flag)

    def dca_enabled(self, did):
        return self[did].dca_enabled

    def issue_dma(self, did, batch, model):
        dev = self[did]
        if batch.device != did:
            raise SimulationError(f"batch for {batch.device!r} issued on device {did!r}")
        epoch, used = self._issued.get(did, (batch.epoch_issued, 0))
        if epoch != batch.epoch_issued:
            used = 0
        used += len(batch.addrs)
        if used > dev.lines_per_epoch:
            raise SimulationError(
                f"device {did}: {used} DMA lines in epoch {batch.epoch_issued} "
                f"exceeds budget {dev.lines_per_epoch}")
        self._issued[did] = (batch.epoch_issued, used)

        dca = dev.dca_enabled
        write = model.dma_write_line
        outcomes = []
        leaks = []
        allocs = 0
        mem = 0
        for addr in batch.addrs:
            r = write(did, addr, dca)
            outcomes.append(r.outcome)
            if r.leaks:
                leaks.extend(r.leaks)
            if r.outcome == ALLOCATE_DCA:
                allocs += 1
            elif r.outcome == MEMORY_WRITE:
                mem += 1
        return DmaResult(outcomes, leaks, allocs, mem)
