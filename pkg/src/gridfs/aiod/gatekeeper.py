"""Load reports and slave selection for the I/O gate keeper."""

from dataclasses import asdict, dataclass, field

from ..errors import BadRequest, NoFreshReports

STALENESS_MS = 10_000.0
DEFAULT_RATE_NORM = 1024 * 1024  # bytes/s used when no rate limit is configured

ROLES = ("io_gatekeeper", "cache_gatekeeper", "slave_io", "slave_cache")


@dataclass
class LoadReport:
    server: str
    open_connections: int
    bytes_per_second_recent: float
    timestamp: float  # ms

    def __post_init__(self):
        if self.open_connections < 0 or self.bytes_per_second_recent < 0:
            raise BadRequest("load report fields must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["server"], int(d["open_connections"]), float(d["bytes_per_second_recent"]),
                   float(d["timestamp"]))


@dataclass
class GateKeeperConfig:
    roles: frozenset = field(default_factory=frozenset)
    slaves: tuple = ()
    cache_budget: int = 1 << 30
    rate_limit: float = 0.0  # bytes/s per connection, 0 is unlimited

    def __post_init__(self):
        self.roles = frozenset(self.roles)
        self.slaves = tuple(self.slaves)
        unknown = self.roles - set(ROLES)
        if unknown:
            raise BadRequest("unknown roles %s" % sorted(unknown))
        if self.roles & {"io_gatekeeper", "cache_gatekeeper"} and not self.slaves:
            raise BadRequest("a gate keeper needs at least one slave")


def load_score(report, rate_limit=0.0):
    norm = rate_limit if rate_limit > 0 else DEFAULT_RATE_NORM
    return report.open_connections + report.bytes_per_second_recent / norm


def pick_io_slave(reports, now, rate_limit=0.0, staleness=STALENESS_MS):
    """Lowest load score among fresh reports; ties go to the smallest address."""
    fresh = [r for r in reports if now - r.timestamp <= staleness]
    if not fresh:
        raise NoFreshReports("no load report newer than %.0f ms" % staleness)
    return min(fresh, key=lambda r: (load_score(r, rate_limit), r.server)).server
