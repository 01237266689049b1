"""Storage back-ends behind the eight plug-in functions of a storage element.

Paths handed to a plug-in are relative to its store root (``v0/ab/<guid>``).
Links are aliases and are not listed by :meth:`SePlugin.lslist`.
"""

import abc
import os
import shutil

from ..errors import AlreadyExists, BackendFailure, BadRequest, NotFound
from ..names import Pfn

IN, OUT = "in", "out"


def _clean(path):
    parts = [p for p in str(path).split("/") if p not in ("", ".")]
    if not parts or ".." in parts:
        raise BadRequest("bad store path %r" % path)
    return "/".join(parts)


class SePlugin(abc.ABC):
    protocol = None

    def __init__(self, host, port):
        self.host = host
        self.port = int(port)

    @abc.abstractmethod
    def mkdir(self, path):
        """Create a directory (and its parents) in the store."""

    @abc.abstractmethod
    def link(self, src, dst):
        """Make ``dst`` a symbolic link to ``src``."""

    @abc.abstractmethod
    def cp(self, local, path, direction):
        """Copy local file ``local`` into the store (``IN``) or out of it (``OUT``)."""

    @abc.abstractmethod
    def mv(self, src, dst):
        pass

    @abc.abstractmethod
    def rm(self, path):
        pass

    @abc.abstractmethod
    def sizeof(self, path):
        pass

    def url(self, path):
        return Pfn(self.protocol, self.host, self.port, _clean(path))

    @abc.abstractmethod
    def lslist(self):
        """Sorted ``[(path, bytes)]`` of every stored file."""


class FilePlugin(SePlugin):
    """Files in a locally mounted directory."""

    protocol = "file"

    def __init__(self, root, host, port):
        super().__init__(host, port)
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)

    def _abs(self, path):
        return os.path.join(self.root, _clean(path))

    def mkdir(self, path):
        try:
            os.makedirs(self._abs(path), exist_ok=True)
        except OSError as exc:
            raise BackendFailure(str(exc)) from exc

    def _regular(self, p):
        return os.path.isfile(p) and not os.path.islink(p)

    def link(self, src, dst):
        s, d = self._abs(src), self._abs(dst)
        if not self._regular(s):
            raise NotFound(src)
        if os.path.lexists(d):
            raise AlreadyExists(dst)
        try:
            os.makedirs(os.path.dirname(d), exist_ok=True)
            os.symlink(s, d)
        except OSError as exc:
            raise BackendFailure(str(exc)) from exc

    def cp(self, local, path, direction):
        p = self._abs(path)
        try:
            if direction == IN:
                os.makedirs(os.path.dirname(p), exist_ok=True)
                tmp = p + ".part"
                shutil.copyfile(local, tmp)
                os.replace(tmp, p)
            elif direction == OUT:
                if not os.path.isfile(p):
                    raise NotFound(path)
                shutil.copyfile(p, local)
            else:
                raise BadRequest("direction must be 'in' or 'out'")
        except OSError as exc:
            raise BackendFailure(str(exc)) from exc

    def mv(self, src, dst):
        s, d = self._abs(src), self._abs(dst)
        if not self._regular(s):
            raise NotFound(src)
        try:
            os.makedirs(os.path.dirname(d), exist_ok=True)
            os.replace(s, d)
        except OSError as exc:
            raise BackendFailure(str(exc)) from exc

    def rm(self, path):
        p = self._abs(path)
        if os.path.isdir(p) and not os.path.islink(p):
            raise NotFound(path)
        try:
            os.remove(p)
        except (FileNotFoundError, NotADirectoryError):
            raise NotFound(path) from None
        except OSError as exc:
            raise BackendFailure(str(exc)) from exc

    def sizeof(self, path):
        p = self._abs(path)
        if not os.path.isfile(p):
            raise NotFound(path)
        return os.path.getsize(p)

    def lslist(self):
        out = []
        for dirpath, _dirs, files in os.walk(self.root):
            for name in files:
                full = os.path.join(dirpath, name)
                if os.path.islink(full) or name.endswith(".part"):
                    continue
                rel = os.path.relpath(full, self.root).replace(os.sep, "/")
                out.append((rel, os.path.getsize(full)))
        return sorted(out)


class MemPlugin(SePlugin):
    """Volatile in-memory store, observationally equivalent to :class:`FilePlugin`.

    Like a directory tree on disk, every path is a regular file, a link or
    a directory; directories appear implicitly and are never removed.
    """

    protocol = "mem"

    def __init__(self, host, port):
        super().__init__(host, port)
        self.files = {}
        self.links = {}
        self.dirs = set()

    def _make_parents(self, path):
        parts = path.split("/")[:-1]
        for i in range(1, len(parts) + 1):
            d = "/".join(parts[:i])
            if d in self.files or d in self.links:
                raise BackendFailure("%s is not a directory" % d)
        for i in range(1, len(parts) + 1):
            self.dirs.add("/".join(parts[:i]))

    def mkdir(self, path):
        path = _clean(path)
        self._make_parents(path + "/x")

    def link(self, src, dst):
        src, dst = _clean(src), _clean(dst)
        if src not in self.files:
            raise NotFound(src)
        if dst in self.files or dst in self.links or dst in self.dirs:
            raise AlreadyExists(dst)
        self._make_parents(dst)
        self.links[dst] = src

    def _target(self, path):
        path = _clean(path)
        return self.links.get(path, path)

    def cp(self, local, path, direction):
        try:
            if direction == IN:
                path = _clean(path)
                if path in self.dirs:
                    raise BackendFailure("%s is a directory" % path)
                self._make_parents(path)
                with open(local, "rb") as fh:
                    data = fh.read()
                self.links.pop(path, None)
                self.files[path] = data
            elif direction == OUT:
                data = self.files.get(self._target(path))
                if data is None:
                    raise NotFound(path)
                with open(local, "wb") as fh:
                    fh.write(data)
            else:
                raise BadRequest("direction must be 'in' or 'out'")
        except OSError as exc:
            raise BackendFailure(str(exc)) from exc

    def mv(self, src, dst):
        src, dst = _clean(src), _clean(dst)
        if src not in self.files:
            raise NotFound(src)
        if dst == src:
            return
        if dst in self.dirs:
            raise BackendFailure("%s is a directory" % dst)
        self._make_parents(dst)
        self.links.pop(dst, None)
        self.files[dst] = self.files.pop(src)

    def rm(self, path):
        path = _clean(path)
        if path in self.links:
            del self.links[path]
        elif self.files.pop(path, None) is None:
            raise NotFound(path)

    def sizeof(self, path):
        data = self.files.get(self._target(path))
        if data is None:
            raise NotFound(path)
        return len(data)

    def lslist(self):
        return sorted((p, len(d)) for p, d in self.files.items())


def make_plugin(kind, host, port, root=None):
    if kind == "file":
        if root is None:
            raise BadRequest("file plug-in needs a store root")
        return FilePlugin(root, host, port)
    if kind == "mem":
        return MemPlugin(host, port)
    raise BadRequest("unknown plug-in %r" % kind)
