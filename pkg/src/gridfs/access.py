"""Client-side grid file API: generic open/read/write/close/sync.

Every open returns a small integer handle that indexes the table of open
files. Reads either talk to the chosen replica's I/O server page by page
(``REMOTE_PARTIAL``) or download the whole file once and read it locally
(``WHOLE_FILE_LOCAL``). Writes are write-once and strictly sequential: they
either stream to the storage element as they happen or collect in a local
file that is shipped on close. Either way the catalogue learns about the
file only after the storage element has validated its size.
"""

import enum
import itertools
import logging
import os
import threading
from dataclasses import dataclass, field

from .aiod.client import AiodSession
from .aiod.route import AccessTicket, RouteChain
from .catalogue.service import CatalogueClient
from .clock import RealClock
from .errors import (BadHandle, GridError, InvalidPath, NonSequentialWrite, RangeError,
                     RegistrationFailed, TransportError, UnknownSe, Unreachable)
from .names import LfnPath, Pfn
from .storage.service import SeClient

log = logging.getLogger(__name__)

CHUNK = 1 << 20


class OpenMode(enum.Enum):
    READ = "read"
    WRITE_ONCE = "write"


class AccessStrategy(enum.Enum):
    REMOTE_PARTIAL = "remote"
    WHOLE_FILE_LOCAL = "local"


def split_se(text):
    """``/a/b@se2`` -> ("/a/b", "se2"); the split is at the last ``@``."""
    text = str(text)
    if "@" in text:
        lfn, se = text.rsplit("@", 1)
        if not se:
            raise InvalidPath("empty SE name in %r" % text)
        return lfn, se
    return text, None


def select_best_replica(replicas, client_site):
    """First replica at the client's site, otherwise the master (first) one."""
    for pfn, site in replicas:
        if site and site == client_site:
            return pfn
    return replicas[0][0]


@dataclass
class ClientConfig:
    catalogue_addr: str
    default_se: str = None
    site: str = ""
    cache_dir: str = "."
    route: str = None
    credential_ref: str = None

    @classmethod
    def from_dict(cls, d):
        return cls(d["catalogue_addr"], d.get("default_se"), d.get("site", ""),
                   d.get("cache_dir", "."), d.get("route"), d.get("credential_ref"))


@dataclass
class FileHandle:
    id: int
    lfn: LfnPath
    guid: str
    mode: OpenMode
    strategy: AccessStrategy
    size: int = 0
    endpoint: Pfn = None
    se_name: str = None
    session: AiodSession = None
    local_path: str = None
    next_offset: int = 0
    perms: str = "644"
    route: RouteChain = None
    lock: object = field(default=None, repr=False)


class OpenFileTable:
    """Open handles by id; ids are never reused within one table."""

    def __init__(self):
        self._handles = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def add(self, make):
        with self._lock:
            hid = next(self._ids)
            self._handles[hid] = handle = make(hid)
            return handle

    def get(self, hid):
        handle = self._handles.get(hid)
        if handle is None:
            raise BadHandle("handle %r is not open" % (hid,))
        return handle

    def pop(self, hid):
        with self._lock:
            handle = self._handles.pop(hid, None)
        if handle is None:
            raise BadHandle("handle %r is not open" % (hid,))
        return handle

    def __contains__(self, hid):
        return hid in self._handles

    def __len__(self):
        return len(self._handles)

    def ids(self):
        return sorted(self._handles)


class GridClient:
    def __init__(self, transport, config, token, clock=None):
        self.transport = transport
        self.config = config
        self.token = token
        self.clock = clock or RealClock()
        self.catalogue = CatalogueClient(transport, config.catalogue_addr, token)
        self.files = OpenFileTable()
        self._ses = None
        self._me = None
        os.makedirs(config.cache_dir, exist_ok=True)

    # -- site information --------------------------------------------------

    @property
    def principal(self):
        if self._me is None:
            self._me = self.catalogue.whoami()
        return self._me

    def ses(self, refresh=False):
        if self._ses is None or refresh:
            self._ses = self.catalogue.list_ses()
        return self._ses

    def se_addr(self, name):
        ses = self.ses()
        if name not in ses:
            ses = self.ses(refresh=True)
        if name not in ses:
            raise UnknownSe("unknown storage element %s" % name)
        return ses[name]["addr"]

    def se_of(self, pfn):
        """(SE name, site) of the storage element holding ``pfn``."""
        for name, info in sorted(self.ses().items()):
            if info["addr"] == pfn.addr:
                return name, info.get("site", "")
        return None, ""

    def se_client(self, addr):
        return SeClient(self.transport, addr, self.token)

    def credential_ref(self):
        return self.config.credential_ref or "/%s/.cred" % self.principal.user

    def _route(self, route):
        route = route if route is not None else self.config.route
        return RouteChain.parse(route) if route else None

    def _ticket(self, route, lfn, pfn, guid):
        return AccessTicket(str(route), self.principal.user, self.credential_ref(), str(lfn),
                            str(pfn), guid)

    # -- open ---------------------------------------------------------------

    def generic_open(self, lfn, mode=OpenMode.READ, strategy=AccessStrategy.REMOTE_PARTIAL,
                     route=None, access="sequential", size_hint=0, perms="644"):
        mode, strategy = OpenMode(mode), AccessStrategy(strategy)
        text, se_name = split_se(lfn)
        path = LfnPath.parse(text)
        route = self._route(route)
        if mode is OpenMode.READ:
            state = self._open_read(path, strategy, route, access)
        else:
            state = self._open_write(path, se_name, strategy, route, size_hint, perms)
        handle = self.files.add(lambda hid: FileHandle(hid, lock=self.clock.lock(), **state))
        return handle.id

    def _open_read(self, path, strategy, route, access):
        guid, size, pfns = self.catalogue.resolve(path)
        located = [(p, self.se_of(p)[1]) for p in pfns]
        best = select_best_replica(located, self.config.site)
        candidates = [best] + [p for p in pfns if p != best]
        state = {"lfn": path, "guid": guid, "mode": OpenMode.READ, "strategy": strategy,
                 "size": size, "route": route}
        staged = os.path.join(self.config.cache_dir, guid)
        if strategy is AccessStrategy.WHOLE_FILE_LOCAL and os.path.exists(staged) \
                and os.path.getsize(staged) == size:
            # a staged copy with this GUID can only hold these bytes
            state.update(endpoint=best, se_name=self.se_of(best)[0], session=None,
                         local_path=staged)
            return state
        session, endpoint = None, None
        errors = []
        for pfn in candidates:
            try:
                if route is not None:
                    session = AiodSession.open(self.transport, self.token, route,
                                               self._ticket(route, path, pfn, guid),
                                               access=access)
                else:
                    self.se_client(pfn.addr).info()
                endpoint = pfn
                break
            except TransportError as exc:
                errors.append("%s: %s" % (pfn, exc))
        if endpoint is None:
            raise Unreachable("no replica of %s reachable (%s)" % (path, "; ".join(errors)))
        state.update(endpoint=endpoint, se_name=self.se_of(endpoint)[0], session=session)
        if strategy is AccessStrategy.WHOLE_FILE_LOCAL:
            try:
                state["local_path"] = self._stage(guid, size, endpoint, session)
            finally:
                if session is not None:
                    _quiet_close(session)
                state["session"] = None
        return state

    def _stage(self, guid, size, endpoint, session):
        """Download the complete file into the client cache, keyed by GUID."""
        dest = os.path.join(self.config.cache_dir, guid)
        if os.path.exists(dest) and os.path.getsize(dest) == size:
            return dest
        tmp = dest + ".part"
        with open(tmp, "wb") as fh:
            for off in range(0, size, CHUNK):
                n = min(CHUNK, size - off)
                if session is not None:
                    fh.write(session.read(off, n))
                else:
                    fh.write(self.se_client(endpoint.addr).fetch_file(endpoint, off, n))
        os.replace(tmp, dest)
        return dest

    def _open_write(self, path, se_name, strategy, route, size_hint, perms):
        self.catalogue.check_create(path)
        se_name = se_name or self.config.default_se
        if not se_name:
            raise UnknownSe("no SE given and no default SE configured")
        se = self.se_client(self.se_addr(se_name))
        guid = self.catalogue.mint_guid()
        pfn, _ = se.allocate_pfn(size_hint, guid)
        state = {"lfn": path, "guid": guid, "mode": OpenMode.WRITE_ONCE, "strategy": strategy,
                 "endpoint": pfn, "se_name": se_name, "perms": str(perms), "route": route}
        try:
            if strategy is AccessStrategy.WHOLE_FILE_LOCAL:
                local = os.path.join(self.config.cache_dir, "write-%s" % guid)
                open(local, "wb").close()
                state["local_path"] = local
            elif route is not None:
                state["session"] = AiodSession.open(self.transport, self.token, route,
                                                    self._ticket(route, path, pfn, guid),
                                                    mode="write", size_hint=size_hint)
        except GridError:
            _quiet(se.abort, pfn)
            raise
        return state

    # -- read / write ---------------------------------------------------------

    def generic_read(self, hid, offset, size):
        h = self.files.get(hid)
        if h.mode is not OpenMode.READ:
            raise BadHandle("handle %d is open for writing" % hid)
        if offset < 0 or offset > h.size:
            raise RangeError("offset %d beyond end of %d-byte file" % (offset, h.size))
        n = max(0, min(size, h.size - offset))
        with h.lock:
            if n == 0:
                return b""
            if h.local_path is not None:
                with open(h.local_path, "rb") as fh:
                    fh.seek(offset)
                    return fh.read(n)
            if h.session is not None:
                return h.session.read(offset, n)
            return self.se_client(h.endpoint.addr).fetch_file(h.endpoint, offset, n)

    def generic_write(self, hid, offset, data, size=None):
        h = self.files.get(hid)
        if h.mode is not OpenMode.WRITE_ONCE:
            raise BadHandle("handle %d is open for reading" % hid)
        data = bytes(data if size is None else data[:size])
        with h.lock:
            if offset != h.next_offset:
                raise NonSequentialWrite("expected offset %d, got %d" % (h.next_offset, offset))
            if data:
                if h.local_path is not None:
                    with open(h.local_path, "ab") as fh:
                        fh.write(data)
                elif h.session is not None:
                    h.session.write(offset, data)
                else:
                    self.se_client(h.endpoint.addr).write(h.endpoint, offset, data)
            h.next_offset += len(data)
            return len(data)

    def generic_sync(self, hid):
        h = self.files.get(hid)
        if h.mode is not OpenMode.WRITE_ONCE:
            raise BadHandle("sync needs a write handle")
        with h.lock:
            if h.local_path is not None:
                with open(h.local_path, "ab") as fh:
                    fh.flush()
                    os.fsync(fh.fileno())
            elif h.session is not None:
                h.session.sync()
            else:
                self.se_client(h.endpoint.addr).sync(h.endpoint)

    # -- close ----------------------------------------------------------------

    def generic_close(self, hid):
        h = self.files.pop(hid)
        with h.lock:
            if h.mode is OpenMode.READ:
                if h.session is not None:
                    _quiet_close(h.session)
                return
            self._finish_write(h)

    def _finish_write(self, h):
        se = self.se_client(h.endpoint.addr)
        try:
            if h.local_path is not None:
                size = self._ship_local(h)
            elif h.session is not None:
                size = h.session.close()["size"]
            else:
                size = se.commit(h.endpoint, h.next_offset)
        except GridError as exc:
            _quiet(se.abort, h.endpoint)
            if exc.code == "AlreadyExists":
                # a staged write opens its aiod session only now; the LFN was
                # taken meanwhile, which is a registration refusal
                raise RegistrationFailed("%s: %s" % (exc.code, exc.msg), cause=exc.code) from exc
            raise
        finally:
            if h.local_path is not None and os.path.exists(h.local_path):
                os.remove(h.local_path)
        try:
            self.catalogue.register_file(h.lfn, h.endpoint, size, h.guid, h.perms)
        except GridError as exc:
            _quiet(se.rm, h.endpoint)
            raise RegistrationFailed("%s: %s" % (exc.code, exc.msg), cause=exc.code) from exc

    def _ship_local(self, h):
        size = os.path.getsize(h.local_path)
        session = None
        if h.route is not None:
            session = AiodSession.open(self.transport, self.token, h.route,
                                       self._ticket(h.route, h.lfn, h.endpoint, h.guid),
                                       mode="write", size_hint=size)
        se = self.se_client(h.endpoint.addr)
        with open(h.local_path, "rb") as fh:
            off = 0
            while True:
                chunk = fh.read(CHUNK)
                if not chunk:
                    break
                if session is not None:
                    session.write(off, chunk)
                else:
                    se.write(h.endpoint, off, chunk)
                off += len(chunk)
        if session is not None:
            return session.close()["size"]
        return se.commit(h.endpoint, size)

    # -- conveniences built on the generic calls --------------------------------

    def write_file(self, lfn, data, strategy=AccessStrategy.REMOTE_PARTIAL, route=None,
                   chunk=CHUNK, perms="644"):
        hid = self.generic_open(lfn, OpenMode.WRITE_ONCE, strategy, route,
                                size_hint=len(data), perms=perms)
        try:
            for off in range(0, len(data), chunk):
                self.generic_write(hid, off, data[off:off + chunk])
        except GridError:
            self._abandon(hid)
            raise
        self.generic_close(hid)
        return len(data)

    def read_file(self, lfn, strategy=AccessStrategy.REMOTE_PARTIAL, route=None, chunk=CHUNK):
        hid = self.generic_open(lfn, OpenMode.READ, strategy, route)
        try:
            size = self.files.get(hid).size
            return b"".join(self.generic_read(hid, off, chunk) for off in range(0, size, chunk))
        finally:
            self.generic_close(hid)

    def _abandon(self, hid):
        """Drop a write handle without registering anything."""
        try:
            h = self.files.pop(hid)
        except BadHandle:
            return
        if h.session is not None:
            _quiet_close(h.session)
        _quiet(self.se_client(h.endpoint.addr).abort, h.endpoint)
        if h.local_path is not None and os.path.exists(h.local_path):
            os.remove(h.local_path)

    def aioget(self, lfn, localpath, route=None):
        hid = self.generic_open(lfn, OpenMode.READ, AccessStrategy.REMOTE_PARTIAL, route)
        try:
            size = self.files.get(hid).size
            with open(localpath, "wb") as fh:
                for off in range(0, size, CHUNK):
                    fh.write(self.generic_read(hid, off, CHUNK))
        finally:
            self.generic_close(hid)
        return size

    def aioput(self, localpath, lfn, route=None):
        size = os.path.getsize(localpath)
        hid = self.generic_open(lfn, OpenMode.WRITE_ONCE, AccessStrategy.REMOTE_PARTIAL, route,
                                size_hint=size)
        try:
            with open(localpath, "rb") as fh:
                off = 0
                while True:
                    chunk = fh.read(CHUNK)
                    if not chunk:
                        break
                    self.generic_write(hid, off, chunk)
                    off += len(chunk)
        except GridError:
            self._abandon(hid)
            raise
        self.generic_close(hid)
        return size


def _quiet(fn, *args):
    try:
        fn(*args)
    except GridError as exc:
        log.debug("cleanup %s failed: %s", getattr(fn, "__name__", fn), exc)


def _quiet_close(session):
    _quiet(session.close)
