"""Route chains and access tickets."""

from dataclasses import dataclass

from ..errors import BadRequest


@dataclass(frozen=True)
class RouteChain:
    """Forwarding path ``host1@host2@host3``, client-nearest hop first."""

    hops: tuple

    def __post_init__(self):
        hops = tuple(self.hops)
        if not hops or any(not h for h in hops):
            raise BadRequest("a route needs at least one non-empty hop")
        for a, b in zip(hops, hops[1:]):
            if a == b:
                raise BadRequest("repeated adjacent hop %s" % a)
        object.__setattr__(self, "hops", hops)

    @classmethod
    def parse(cls, text):
        if isinstance(text, RouteChain):
            return text
        return cls(tuple(h.strip() for h in str(text).split("@")))

    def __str__(self):
        return "@".join(self.hops)

    def __len__(self):
        return len(self.hops)

    @property
    def first(self):
        return self.hops[0]

    @property
    def rest(self):
        return RouteChain(self.hops[1:]) if len(self.hops) > 1 else None

    def replace_first(self, addr):
        return RouteChain((addr,) + self.hops[1:])


ENCRYPTIONS = ("none", "stub")


@dataclass
class AccessTicket:
    route: str
    grid_user: str
    credential_ref: str
    lfn: str
    pfn: str
    guid: str
    encryption: str = "none"

    def to_dict(self):
        return {"route": self.route, "grid_user": self.grid_user,
                "credential_ref": self.credential_ref, "lfn": self.lfn, "pfn": self.pfn,
                "guid": self.guid, "encryption": self.encryption}

    @classmethod
    def from_dict(cls, d):
        if d.get("encryption", "none") not in ENCRYPTIONS:
            raise BadRequest("unknown encryption %r" % d.get("encryption"))
        return cls(d["route"], d["grid_user"], d["credential_ref"], d["lfn"], d["pfn"],
                   d["guid"], d.get("encryption", "none"))
