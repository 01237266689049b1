"""Principals and owner/group/other permission bits."""

from dataclasses import dataclass, field

READ, WRITE, EXECUTE = 4, 2, 1


@dataclass(frozen=True)
class Principal:
    user: str
    groups: tuple = field(default=())

    def __post_init__(self):
        if not self.user:
            raise ValueError("principal needs a user name")
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def primary_group(self):
        return self.groups[0] if self.groups else self.user

    def to_dict(self):
        return {"user": self.user, "groups": list(self.groups)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["user"], tuple(d.get("groups", ())))


@dataclass(frozen=True)
class PermissionBits:
    mode: int

    def __post_init__(self):
        if not 0 <= self.mode <= 0o777:
            raise ValueError("mode out of range: %o" % self.mode)

    @classmethod
    def parse(cls, value):
        if isinstance(value, PermissionBits):
            return value
        if isinstance(value, int):
            return cls(value)
        return cls(int(str(value), 8))

    def __str__(self):
        return "%03o" % self.mode

    def symbolic(self):
        out = []
        for shift in (6, 3, 0):
            bits = (self.mode >> shift) & 7
            out.append(("r" if bits & READ else "-") + ("w" if bits & WRITE else "-")
                       + ("x" if bits & EXECUTE else "-"))
        return "".join(out)

    def class_bits(self, who, owner, group):
        """Bits that apply to ``who``: owner match, else group match, else other."""
        if who.user == owner:
            return (self.mode >> 6) & 7
        if group in who.groups:
            return (self.mode >> 3) & 7
        return self.mode & 7

    def allows(self, who, owner, group, want):
        return self.class_bits(who, owner, group) & want == want
