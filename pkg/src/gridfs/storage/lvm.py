"""Logical volume manager: several volumes presented as one store."""

from dataclasses import dataclass, field

from ..errors import BadRequest, NoSpace, QuotaExceeded

INFINITE = "infinite"


@dataclass
class Volume:
    id: str
    mount_point: str
    capacity: int
    used: int = 0
    default_lifetime: int = None  # seconds, None means infinite

    @classmethod
    def from_config(cls, entry):
        life = entry.get("lifetime_s", INFINITE)
        return cls(entry["id"], entry["mount_point"].strip("/"), int(entry["capacity_bytes"]),
                   default_lifetime=None if life in (None, INFINITE) else int(life))

    def owns(self, path):
        return path == self.mount_point or path.startswith(self.mount_point + "/")


@dataclass
class Placement:
    volume: str
    size: int
    expiry: int = None


@dataclass
class LvmState:
    volumes: dict = field(default_factory=dict)  # id -> Volume, insertion ordered
    placements: dict = field(default_factory=dict)  # path -> Placement
    reservations: dict = field(default_factory=dict)  # path -> (volume id, bytes)

    def __post_init__(self):
        if isinstance(self.volumes, list):
            self.volumes = {v.id: v for v in self.volumes}

    def reserved(self, vid):
        return sum(n for v, n in self.reservations.values() if v == vid)

    def free(self, vid, excluding=None):
        vol = self.volumes[vid]
        held = sum(n for p, (v, n) in self.reservations.items() if v == vid and p != excluding)
        return vol.capacity - vol.used - held

    def choose_volume(self, size_hint):
        """Volume with the most free bytes; ties go to the smallest id."""
        best = None
        for vid in sorted(self.volumes):
            free = self.free(vid)
            if free >= size_hint and (best is None or free > best[1]):
                best = (vid, free)
        if best is None:
            raise NoSpace("no volume has %d free bytes" % size_hint)
        return best[0]

    def volume_for(self, path):
        match = None
        for vol in self.volumes.values():
            if vol.owns(path) and (match is None or len(vol.mount_point) > len(match.mount_point)):
                match = vol
        return match

    def reserve(self, path, vid, nbytes):
        if path in self.reservations or path in self.placements:
            raise BadRequest("%s already reserved or stored" % path)
        self.reservations[path] = (vid, int(nbytes))

    def release(self, path):
        return self.reservations.pop(path, None)

    def commit(self, path, actual, now):
        vid, _ = self.reservations[path]
        vol = self.volumes[vid]
        if actual > self.free(vid, excluding=path):
            raise QuotaExceeded("%d bytes do not fit on volume %s" % (actual, vid))
        self.reservations.pop(path)
        expiry = None if vol.default_lifetime is None else now + vol.default_lifetime
        self.placements[path] = Placement(vid, int(actual), expiry)
        vol.used += int(actual)
        return self.placements[path]

    def adopt(self, path, size, now):
        vol = self.volume_for(path)
        if vol is None:
            return None
        expiry = None if vol.default_lifetime is None else now + vol.default_lifetime
        self.placements[path] = Placement(vol.id, int(size), expiry)
        vol.used += int(size)
        return vol

    def drop(self, path):
        pl = self.placements.pop(path, None)
        if pl is not None:
            self.volumes[pl.volume].used -= pl.size
        return pl

    def recompute_used(self):
        for vol in self.volumes.values():
            vol.used = 0
        for pl in self.placements.values():
            self.volumes[pl.volume].used += pl.size
