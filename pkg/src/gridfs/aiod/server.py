"""The cache-and-forward I/O server.

A session is opened with an access ticket. Reads are served page by page
from the local page store; a missing page is fetched from the next hop of
the route (another aiod) or, at the end of the route, from the storage
element named in the PFN. Writes are forwarded hop by hop to the storage
element while every hop keeps the pages it saw.

A server with a gate keeper role answers OPEN with a Redirect instead: the
cache gate keeper to a slave already holding the GUID, the I/O gate keeper
to the slave with the lowest reported load.
"""

import itertools
import logging
import os
from collections import deque
from dataclasses import dataclass, field

from ..catalogue.service import CatalogueClient
from ..errors import (BadHandle, BadRequest, GridError, NoFreshReports, NonSequentialWrite,
                      RangeError,
                      Redirect, TicketInvalid, TransportError, Unreachable)
from ..names import Pfn
from ..storage.service import SeClient
from ..transport import Service
from .gatekeeper import STALENESS_MS, GateKeeperConfig, LoadReport, pick_io_slave
from .pagestore import PageStore
from .paging import SEQUENTIAL, covering_pages, page_size_for
from .ratelimit import TokenBucket
from .route import AccessTicket, RouteChain

log = logging.getLogger(__name__)

MAX_REDIRECTS = 4
LOCATE_DEADLINE_MS = 1000.0
LOAD_WINDOW_MS = 10_000.0

READ_MODE, WRITE_MODE = "read", "write"


class Envelope:
    """Per-page transform applied between servers; only identity exists."""

    def seal(self, data):
        return data

    def open(self, data):
        return data


ENVELOPES = {"none": Envelope(), "stub": Envelope()}


def open_following(transport, route, args, auth, max_redirects=MAX_REDIRECTS):
    """OPEN at the first hop of ``route``, following Redirects without cycles.

    Returns (address that accepted, response value).
    """
    route = RouteChain.parse(route)
    visited = []
    while True:
        addr = route.first
        visited.append(addr)
        ticket = dict(args["ticket"], route=str(route))
        try:
            value, _ = transport.call(addr, "OPEN", dict(args, ticket=ticket), auth)
            return addr, value
        except Redirect as r:
            if r.addr in visited:
                raise Unreachable("redirect cycle via %s" % r.addr) from None
            if len(visited) > max_redirects:
                raise Unreachable("more than %d redirects" % max_redirects) from None
            route = route.replace_first(r.addr)


@dataclass
class _Session:
    id: int
    ticket: AccessTicket
    mode: str
    auth: str
    size: int
    page_size: int
    access: str
    bucket: TokenBucket
    downstream: tuple = None  # (addr, session id)
    offset: int = 0  # next expected write offset
    wbuf: bytearray = field(default_factory=bytearray)
    wbuf_offset: int = 0
    preload_errors: list = field(default_factory=list)
    lock: object = None


class _Fetch:
    def __init__(self, event):
        self.event = event
        self.data = None
        self.error = None


class AiodServer(Service):
    returns_payload = ("READ",)

    def __init__(self, addr, transport, clock, catalogue_addr, cache_dir, config=None,
                 auth=None):
        self.addr = addr
        self.auth = auth  # own token for server-to-server calls
        self.transport = transport
        self.clock = clock
        self.catalogue_addr = catalogue_addr
        self.config = config or GateKeeperConfig()
        self.store = PageStore(os.path.join(cache_dir, "pages"), self.config.cache_budget, clock)
        self.sessions = {}
        self._ids = itertools.count(1)
        self._inflight = {}
        self.reports = {}  # server -> latest LoadReport
        self._served = deque()  # (t, bytes) for the recent bandwidth figure
        self.stats = {"next_hop_fetches": 0, "hits": 0, "coalesced": 0, "redirects": 0,
                      "opens": 0, "bytes_served": 0}

    # -- plumbing ---------------------------------------------------------

    def _catalogue(self, auth):
        return CatalogueClient(self.transport, self.catalogue_addr, auth)

    def _session(self, a):
        s = self.sessions.get(a.get("session"))
        if s is None:
            raise BadHandle("no session %r" % a.get("session"))
        return s

    def _account(self, nbytes):
        now = self.clock.now()
        self._served.append((now, nbytes))
        while self._served and self._served[0][0] < now - LOAD_WINDOW_MS:
            self._served.popleft()
        self.stats["bytes_served"] += nbytes

    def _throttle(self, session, nbytes):
        delay = session.bucket.reserve(nbytes, self.clock.now())
        if delay > 0:
            self.clock.sleep(delay)

    # -- OPEN -------------------------------------------------------------

    def op_OPEN(self, a, auth, _):
        ticket = AccessTicket.from_dict(a["ticket"])
        mode = a.get("mode", READ_MODE)
        if mode not in (READ_MODE, WRITE_MODE):
            raise BadRequest("mode must be read or write")
        route = RouteChain.parse(ticket.route)
        if route.first != self.addr:
            raise TicketInvalid("route starts at %s, not here (%s)" % (route.first, self.addr))
        self._maybe_redirect(ticket, mode)

        size = self._validate(ticket, mode, auth)
        if mode == WRITE_MODE:
            size = int(a.get("size_hint") or 0)
        access = a.get("access", SEQUENTIAL)
        page_size = int(a.get("page_size") or page_size_for(size, access))
        # one paging of a GUID per server, so cached and in-flight pages line up
        live = [o.page_size for o in self.sessions.values() if o.ticket.guid == ticket.guid]
        page_size = self.store.page_size(ticket.guid, live[0] if live else page_size)

        downstream = None
        if route.rest is not None:
            down_args = {"ticket": dict(ticket.to_dict()), "mode": mode, "access": access,
                         "page_size": page_size, "size_hint": a.get("size_hint")}
            addr, value = open_following(self.transport, route.rest, down_args, auth)
            downstream = (addr, value["session"])

        sid = next(self._ids)
        self.sessions[sid] = _Session(sid, ticket, mode, auth, size, page_size, access,
                                      TokenBucket(self.config.rate_limit, now=self.clock.now()),
                                      downstream, lock=self.clock.lock())
        self.stats["opens"] += 1
        return {"session": sid, "size": size, "page_size": page_size, "guid": ticket.guid,
                "server": self.addr}

    def _maybe_redirect(self, ticket, mode):
        roles = self.config.roles
        if mode == READ_MODE and "cache_gatekeeper" in roles:
            holder = self.locate_guid(ticket.guid)
            if holder is not None and holder != self.addr:
                self.stats["redirects"] += 1
                raise Redirect(holder)
        if "io_gatekeeper" in roles:
            try:
                target = pick_io_slave(list(self.reports.values()), self.clock.now(),
                                       self.config.rate_limit, STALENESS_MS)
            except NoFreshReports:
                log.warning("%s has no fresh load reports, serving locally", self.addr)
                return
            if target != self.addr:
                self.stats["redirects"] += 1
                raise Redirect(target)

    def _validate(self, ticket, mode, auth):
        """Check the ticket against the catalogue as the ticket's grid user."""
        cat = self._catalogue(auth)
        try:
            cred = cat.read_dbfile(ticket.credential_ref)
        except GridError as exc:
            if isinstance(exc, TransportError):
                raise
            raise TicketInvalid("credential %s unusable: %s" % (ticket.credential_ref, exc.code)) from None
        if cred.strip() != str(auth):
            raise TicketInvalid("credential does not match the presented token")
        if cat.whoami().user != ticket.grid_user:
            raise TicketInvalid("token does not belong to %s" % ticket.grid_user)
        if mode == READ_MODE:
            guid, size, pfns = cat.resolve(ticket.lfn)
            if guid != ticket.guid:
                raise TicketInvalid("GUID %s does not label %s" % (ticket.guid, ticket.lfn))
            if Pfn.parse(ticket.pfn) not in pfns:
                raise TicketInvalid("%s is not a location of %s" % (ticket.pfn, ticket.lfn))
            return size
        cat.check_create(ticket.lfn)
        if cat.guid_lookup(ticket.guid) is not None:
            raise TicketInvalid("GUID %s is already in use" % ticket.guid)
        return 0

    # -- READ -------------------------------------------------------------

    def op_READ(self, a, auth, _):
        s = self._session(a)
        if s.mode != READ_MODE:
            raise BadHandle("session %d is not open for reading" % s.id)
        offset, size = int(a["offset"]), int(a["size"])
        if offset < 0 or offset > s.size or size < 0:
            raise RangeError("offset %d outside %d-byte file" % (offset, s.size))
        data = self.read_range(s, offset, size, coalesce=not a.get("hop"))
        self._throttle(s, len(data))
        self._account(len(data))
        return None, ENVELOPES[s.ticket.encryption].seal(data)

    def read_range(self, s, offset, size, coalesce=True):
        parts = []
        for poff, plen in covering_pages(offset, size, s.page_size, s.size):
            page = self._page(s, poff, plen, coalesce)
            lo = max(offset, poff) - poff
            hi = min(offset + size, poff + plen) - poff
            parts.append(page[lo:hi])
        return b"".join(parts)

    def _page(self, s, poff, plen, coalesce=True):
        guid = s.ticket.guid
        data = self.store.get(guid, poff)
        if data is not None and len(data) == plen:
            self.stats["hits"] += 1
            return data
        key = (guid, poff, plen)
        pending = self._inflight.get(key)
        # Only reads arriving from a client wait on another fetch. A hop read
        # that waited could close a cycle through a chain running the other way.
        if pending is not None and coalesce:
            self.stats["coalesced"] += 1
            pending.event.wait()
            if pending.error is not None:
                raise pending.error
            return pending.data
        fetch = _Fetch(self.clock.event())
        self._inflight[key] = fetch
        try:
            data = self._fetch_next(s, poff, plen)
            if len(data) != plen:
                raise TransportError("short page %d+%d: got %d bytes" % (poff, plen, len(data)))
            fetch.data = data
            self.store.put(guid, poff, data, s.page_size)
            return data
        except GridError as exc:
            fetch.error = exc
            raise
        finally:
            if self._inflight.get(key) is fetch:
                del self._inflight[key]
            fetch.event.set()

    def _fetch_next(self, s, poff, plen):
        self.stats["next_hop_fetches"] += 1
        env = ENVELOPES[s.ticket.encryption]
        if s.downstream is not None:
            addr, sid = s.downstream
            _, data = self.transport.call(addr, "READ", {"session": sid, "offset": poff,
                                                         "size": plen, "hop": True}, s.auth)
            return env.open(data)
        pfn = Pfn.parse(s.ticket.pfn)
        return SeClient(self.transport, pfn.addr, s.auth).fetch_file(pfn, poff, plen)

    # -- PRELOAD ----------------------------------------------------------

    def op_PRELOAD(self, a, auth, _):
        s = self._session(a)
        if s.mode != READ_MODE:
            raise BadHandle("preload needs a read session")
        plan = [(int(o), int(n)) for o, n in a.get("plan") or [(0, s.size)]]
        task = self.clock.spawn(self._preload, s, plan, name="preload-%s-%d" % (self.addr, s.id))
        if a.get("wait"):
            task.join()
            return {"errors": list(s.preload_errors)}
        return {"errors": []}

    def _preload(self, s, plan):
        for off, n in plan:
            for poff, plen in covering_pages(off, n, s.page_size, s.size):
                try:
                    self._page(s, poff, plen)
                except GridError as exc:
                    s.preload_errors.append([poff, exc.code])
                    break

    # -- WRITE / CLOSE ----------------------------------------------------

    def op_WRITE(self, a, auth, payload):
        s = self._session(a)
        if s.mode != WRITE_MODE:
            raise BadHandle("session %d is not open for writing" % s.id)
        data = ENVELOPES[s.ticket.encryption].open(payload or b"")
        offset = int(a["offset"])
        with s.lock:
            if offset != s.offset:
                raise NonSequentialWrite("expected offset %d, got %d" % (s.offset, offset))
            if s.downstream is not None:
                addr, sid = s.downstream
                self.transport.call(addr, "WRITE", {"session": sid, "offset": offset}, s.auth,
                                    ENVELOPES[s.ticket.encryption].seal(data))
            else:
                pfn = Pfn.parse(s.ticket.pfn)
                SeClient(self.transport, pfn.addr, s.auth).write(pfn, offset, data)
            s.offset += len(data)
            s.wbuf += data
            while len(s.wbuf) >= s.page_size:
                self.store.put(s.ticket.guid, s.wbuf_offset, bytes(s.wbuf[:s.page_size]),
                               s.page_size)
                del s.wbuf[:s.page_size]
                s.wbuf_offset += s.page_size
        self._throttle(s, len(data))
        self._account(len(data))
        return s.offset

    def op_SYNC(self, a, auth, _):
        s = self._session(a)
        if s.mode != WRITE_MODE:
            raise BadHandle("session %d is not open for writing" % s.id)
        if s.downstream is not None:
            addr, sid = s.downstream
            return self.transport.call(addr, "SYNC", {"session": sid}, s.auth)[0]
        pfn = Pfn.parse(s.ticket.pfn)
        return SeClient(self.transport, pfn.addr, s.auth).sync(pfn)

    def op_CLOSE(self, a, auth, _):
        s = self.sessions.pop(a.get("session"), None)
        if s is None:
            raise BadHandle("no session %r" % a.get("session"))
        if s.mode == READ_MODE:
            if s.downstream is not None:
                addr, sid = s.downstream
                try:
                    self.transport.call(addr, "CLOSE", {"session": sid}, s.auth)
                except GridError:
                    pass
            return {"size": s.size}
        if s.downstream is not None:
            addr, sid = s.downstream
            value, _ = self.transport.call(addr, "CLOSE", {"session": sid}, s.auth)
            size = value["size"]
        else:
            pfn = Pfn.parse(s.ticket.pfn)
            size = SeClient(self.transport, pfn.addr, s.auth).commit(pfn, s.offset)
        if s.wbuf:
            self.store.put(s.ticket.guid, s.wbuf_offset, bytes(s.wbuf), s.page_size)
        return {"size": size}

    # -- gate keeping and monitoring --------------------------------------

    def op_HAS_GUID(self, a, auth, _):
        return self.store.has_guid(a["guid"])

    def op_LOCATE_GUID(self, a, auth, _):
        return self.locate_guid(a["guid"])

    def locate_guid(self, guid, deadline_ms=LOCATE_DEADLINE_MS):
        """Ask every slave at once; the first positive answer wins."""
        slaves = [s for s in self.config.slaves if s != self.addr]
        if not slaves:
            return None
        found = []
        done = self.clock.event()
        remaining = [len(slaves)]

        def ask(slave):
            try:
                has, _ = self.transport.call(slave, "HAS_GUID", {"guid": guid}, self.auth)
            except GridError:
                has = False
            if has and not found:
                found.append(slave)
                done.set()
            remaining[0] -= 1
            if not remaining[0]:
                done.set()

        for slave in slaves:
            self.clock.spawn(ask, slave, name="locate-%s" % slave)
        done.wait(deadline_ms)
        return found[0] if found else None

    def op_LOAD_REPORT(self, a, auth, _):
        report = LoadReport.from_dict(a["report"])
        self.reports[report.server] = report

    def load_report(self):
        now = self.clock.now()
        while self._served and self._served[0][0] < now - LOAD_WINDOW_MS:
            self._served.popleft()
        bps = sum(n for _, n in self._served) * 1000.0 / LOAD_WINDOW_MS
        return LoadReport(self.addr, len(self.sessions), bps, now)

    def report_to(self, gatekeeper_addr):
        self.transport.call(gatekeeper_addr, "LOAD_REPORT",
                            {"report": self.load_report().to_dict()}, self.auth)

    def start_monitor(self, gatekeeper_addr, interval_ms=2000.0, rounds=None):
        """Monitoring daemon: push a load report every ``interval_ms``."""

        def loop():
            n = 0
            while rounds is None or n < rounds:
                try:
                    self.report_to(gatekeeper_addr)
                except GridError as exc:
                    log.warning("load report to %s failed: %s", gatekeeper_addr, exc)
                n += 1
                self.clock.sleep(interval_ms)

        return self.clock.spawn(loop, name="monitor-%s" % self.addr)

    def op_STATS(self, a, auth, _):
        return dict(self.stats, cached_bytes=self.store.total_bytes,
                    open_sessions=len(self.sessions))
