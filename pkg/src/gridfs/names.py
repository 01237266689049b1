"""Logical and physical file names."""

import re
import uuid
from dataclasses import dataclass

from .errors import InvalidPath

GRID_SCHEME = "grid://"
MAX_SEGMENT = 255


@dataclass(frozen=True, order=True)
class LfnPath:
    """Absolute, normalized logical file name."""

    segments: tuple = ()

    @classmethod
    def parse(cls, text, cwd=None):
        """Parse ``/a/b``, ``grid:///a/b`` or (with ``cwd``) a relative path.

        ``.`` and ``..`` are resolved lexically; ``..`` at the root stays at
        the root.
        """
        if isinstance(text, LfnPath):
            return text
        if not isinstance(text, str) or not text:
            raise InvalidPath("empty logical file name")
        if text.startswith(GRID_SCHEME):
            text = "/" + text[len(GRID_SCHEME):].lstrip("/")
        if not text.startswith("/"):
            if cwd is None:
                raise InvalidPath("relative LFN without working directory: %r" % text)
            text = str(cwd) + "/" + text
        segs = []
        for seg in text.split("/"):
            if seg in ("", "."):
                continue
            if seg == "..":
                if segs:
                    segs.pop()
                continue
            if "\0" in seg or "@" in seg:
                raise InvalidPath("illegal character in %r" % seg)
            if len(seg.encode()) > MAX_SEGMENT:
                raise InvalidPath("path component longer than %d bytes" % MAX_SEGMENT)
            segs.append(seg)
        return cls(tuple(segs))

    def __str__(self):
        return "/" + "/".join(self.segments)

    @property
    def is_root(self):
        return not self.segments

    @property
    def name(self):
        return self.segments[-1] if self.segments else ""

    @property
    def parent(self):
        if not self.segments:
            raise InvalidPath("root has no parent")
        return LfnPath(self.segments[:-1])

    def child(self, name):
        return LfnPath.parse(str(self).rstrip("/") + "/" + name)

    def ancestors(self):
        """Every directory from the root down to the parent."""
        return [LfnPath(self.segments[:i]) for i in range(len(self.segments))]


_PFN_RE = re.compile(r"^([A-Za-z][A-Za-z0-9+.-]*)://([^:/\s]+):(\d+)/(.*)$")


@dataclass(frozen=True)
class Pfn:
    protocol: str
    host: str
    port: int
    direntry: str

    def __post_init__(self):
        if not 1 <= int(self.port) <= 65535:
            raise InvalidPath("port out of range: %r" % self.port)

    @classmethod
    def parse(cls, text):
        if isinstance(text, Pfn):
            return text
        m = _PFN_RE.match(text or "")
        if not m:
            raise InvalidPath("not a PFN: %r" % text)
        return cls(m.group(1), m.group(2), int(m.group(3)), m.group(4))

    def __str__(self):
        return "%s://%s:%d/%s" % (self.protocol, self.host, self.port, self.direntry)

    @property
    def addr(self):
        """Network address of the storage element holding this copy."""
        return "%s:%d" % (self.host, self.port)


def new_guid(rng=None):
    if rng is None:
        return str(uuid.uuid4())
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


def canonical_guid(text):
    try:
        return str(uuid.UUID(str(text)))
    except ValueError:
        raise InvalidPath("not a GUID: %r" % text) from None


def is_guid(text):
    try:
        return str(uuid.UUID(text)) == text
    except (ValueError, TypeError, AttributeError):
        return False
