"""Asynchronous transfer queue: replicate or move files between SEs.

Requests wait in a FIFO queue until :meth:`TransferBroker.broker_step`
picks them up. A transfer copies the file from a source replica into a new
allocation on the destination SE and registers the new location only after
the destination has committed the expected number of bytes.
"""

import itertools
import logging
from collections import deque
from dataclasses import asdict, dataclass

from .catalogue.service import CatalogueClient
from .errors import (AlreadyReplicated, BadRequest, GridError, NotFound, TransportError,
                     UnknownSe)
from .journal import Journal
from .storage.service import SeClient
from .transport import Service

log = logging.getLogger(__name__)

REPLICATE, MOVE = "replicate", "move"
QUEUED, RUNNING, DONE, FAILED = "queued", "running", "done", "failed"
CHUNK = 1 << 20

_ALLOWED = {QUEUED: {RUNNING}, RUNNING: {DONE, FAILED}, FAILED: {QUEUED}, DONE: set()}


@dataclass
class TransferRequest:
    id: int
    lfn: str
    dst_se: str
    kind: str = REPLICATE
    src_se: str = "any"
    state: str = QUEUED
    attempts: int = 0
    last_error: str = None
    requested_by: str = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def move_to(self, state):
        if state not in _ALLOWED[self.state]:
            raise BadRequest("request %d cannot go from %s to %s" % (self.id, self.state, state))
        self.state = state
        if state == RUNNING:
            self.attempts += 1


class TransferBroker:
    """Queue plus the daemon that executes it.

    ``token`` is the broker's own catalogue identity; it must be allowed to
    add and drop locations of any file it is asked to copy (normally the
    catalogue superuser). Requesters are checked with their own token when
    they enqueue.
    """

    def __init__(self, transport, catalogue_addr, token, clock, max_concurrent=2, retry_limit=3,
                 journal_path=None, snapshot_every=1000):
        self.transport = transport
        self.catalogue_addr = catalogue_addr
        self.token = token
        self.clock = clock
        self.max_concurrent = max(1, int(max_concurrent))
        self.retry_limit = int(retry_limit)
        self.requests = {}
        self.queue = deque()
        self.completed = []  # ids in completion order
        self._ids = itertools.count(1)
        self._lock = clock.lock()
        self.journal = Journal(journal_path, snapshot_every) if journal_path else None
        if self.journal is not None:
            self._recover()

    # -- persistence ------------------------------------------------------

    def _recover(self):
        snap, records = self.journal.load()
        for line in (snap or [])[1:]:
            req = TransferRequest.from_dict(line)
            self.requests[req.id] = req
        for rec in records:
            req = TransferRequest.from_dict(rec["args"])
            self.requests[req.id] = req
        for req in self.requests.values():
            if req.state == RUNNING:  # interrupted by a crash: run it again
                req.state = QUEUED
        self.queue = deque(sorted(r.id for r in self.requests.values() if r.state == QUEUED))
        self._ids = itertools.count(max(self.requests, default=0) + 1)

    def _save(self, req):
        if self.journal is None:
            return
        self.journal.append("request", req.to_dict())
        if self.journal.snapshot_due():
            self.journal.write_snapshot([r.to_dict() for _, r in sorted(self.requests.items())])

    def close(self):
        if self.journal is not None:
            self.journal.close()

    # -- public operations ------------------------------------------------

    def enqueue(self, auth, lfn, dst_se, kind=REPLICATE, src_se="any"):
        if kind not in (REPLICATE, MOVE):
            raise BadRequest("kind must be replicate or move")
        cat = CatalogueClient(self.transport, self.catalogue_addr, auth)
        _, _, pfns = cat.resolve(lfn)
        ses = cat.list_ses()
        if dst_se not in ses:
            raise UnknownSe("unknown storage element %s" % dst_se)
        if src_se != "any" and src_se not in ses:
            raise UnknownSe("unknown storage element %s" % src_se)
        if any(p.addr == ses[dst_se]["addr"] for p in pfns):
            raise AlreadyReplicated("%s already has a copy on %s" % (lfn, dst_se))
        who = cat.whoami().user
        with self._lock:
            req = TransferRequest(next(self._ids), str(lfn), dst_se, kind, src_se,
                                  requested_by=who)
            self.requests[req.id] = req
            self.queue.append(req.id)
            self._save(req)
        return req.id

    def query(self, rid):
        req = self.requests.get(int(rid))
        if req is None:
            raise NotFound("no transfer request %s" % rid)
        return TransferRequest.from_dict(req.to_dict())

    def pending(self):
        return len(self.queue)

    def broker_step(self):
        """Run up to ``max_concurrent`` queued requests to completion."""
        with self._lock:
            batch, held, busy = [], [], set()
            while self.queue and len(batch) < self.max_concurrent:
                req = self.requests[self.queue.popleft()]
                key = (req.lfn, req.dst_se)
                if key in busy:
                    # one copy per file and destination at a time
                    held.append(req.id)
                    continue
                busy.add(key)
                req.move_to(RUNNING)
                self._save(req)
                batch.append(req)
            self.queue.extendleft(reversed(held))
        tasks = [self.clock.spawn(self._run, req, name="transfer-%d" % req.id) for req in batch]
        for t in tasks:
            t.join()
        with self._lock:
            for req in batch:
                if req.state == FAILED and req.attempts < self.retry_limit:
                    req.move_to(QUEUED)
                    self.queue.append(req.id)
                    self._save(req)
        return [req.id for req in batch]

    def run_until_settled(self, max_steps=10_000):
        steps = 0
        while self.queue and steps < max_steps:
            self.broker_step()
            steps += 1
        return steps

    # -- execution --------------------------------------------------------

    def _run(self, req):
        try:
            self._execute(req)
        except GridError as exc:
            req.last_error = "%s: %s" % (exc.code, exc.msg)
            log.info("transfer %d attempt %d failed: %s", req.id, req.attempts, req.last_error)
            with self._lock:
                req.move_to(FAILED)
                self._save(req)
            return
        with self._lock:
            req.last_error = None
            req.move_to(DONE)
            self.completed.append(req.id)
            self._save(req)

    def _execute(self, req):
        cat = CatalogueClient(self.transport, self.catalogue_addr, self.token)
        guid, size, pfns = cat.resolve(req.lfn)
        ses = cat.list_ses()
        if req.dst_se not in ses:
            raise UnknownSe("unknown storage element %s" % req.dst_se)
        dst_addr = ses[req.dst_se]["addr"]
        if req.src_se != "any":
            src_addr = ses[req.src_se]["addr"]
            sources = [p for p in pfns if p.addr == src_addr]
        else:
            sources = [p for p in pfns if p.addr != dst_addr]
        existing = [p for p in pfns if p.addr == dst_addr]
        if existing:
            # an earlier attempt registered the copy; never add a second row
            if req.kind == MOVE:
                self._drop_sources(cat, req, sources)
            return
        if not sources:
            raise NotFound("no source copy of %s" % req.lfn)

        dst = SeClient(self.transport, dst_addr, self.token)
        last = None
        for src_pfn in sources:
            # the destination holds no registered copy, so anything it still
            # keeps under this GUID is a leftover of an earlier attempt
            dpfn, _ = dst.allocate_pfn(size, guid, replace=True)
            try:
                self._copy(src_pfn, dst, dpfn, size)
            except _SourceFailed as exc:
                _quiet(dst.abort, dpfn)
                last = exc.cause
                continue
            except GridError:
                _quiet(dst.abort, dpfn)
                raise
            self._register(cat, req, dst, dpfn, size)
            if req.kind == MOVE:
                self._drop_sources(cat, req, [src_pfn])
            return
        raise last

    def _copy(self, src_pfn, dst, dpfn, size):
        src = SeClient(self.transport, src_pfn.addr, self.token)
        for off in range(0, size, CHUNK):
            n = min(CHUNK, size - off)
            try:
                data = src.fetch_file(src_pfn, off, n)
            except TransportError as exc:
                raise _SourceFailed(exc) from exc
            dst.write(dpfn, off, data)
        dst.commit(dpfn, size)

    def _register(self, cat, req, dst, dpfn, size):
        try:
            cat.add_replica(req.lfn, dpfn, size)
        except TransportError:
            # the reply may have been lost after the row was written
            try:
                _, _, now = cat.resolve(req.lfn)
            except GridError:
                now = []
            if dpfn in now:
                return
            _quiet(dst.rm, dpfn)
            raise
        except GridError:
            _quiet(dst.rm, dpfn)
            raise

    def _drop_sources(self, cat, req, sources):
        for pfn in sources:
            cat.drop_location(req.lfn, pfn)
            _quiet(SeClient(self.transport, pfn.addr, self.token).rm, pfn)


class _SourceFailed(Exception):
    """The source copy became unreachable; another replica may still work."""

    def __init__(self, cause):
        super().__init__(str(cause))
        self.cause = cause


def _quiet(fn, *args):
    try:
        fn(*args)
    except GridError as exc:
        log.debug("cleanup %s failed: %s", getattr(fn, "__name__", fn), exc)


class BrokerService(Service):
    def __init__(self, broker):
        self.broker = broker

    def op_enqueue(self, a, auth, _):
        return self.broker.enqueue(auth, a["lfn"], a["dst_se"], a.get("kind", REPLICATE),
                                   a.get("src_se", "any"))

    def op_query(self, a, auth, _):
        return self.broker.query(a["id"]).to_dict()

    def op_step(self, a, auth, _):
        return self.broker.broker_step()

    def op_list(self, a, auth, _):
        return [r.to_dict() for _, r in sorted(self.broker.requests.items())]


class BrokerClient:
    def __init__(self, transport, addr, token):
        self.transport = transport
        self.addr = addr
        self.token = token

    def _call(self, op, **args):
        return self.transport.call(self.addr, op, args, self.token)[0]

    def enqueue(self, lfn, dst_se, kind=REPLICATE, src_se="any"):
        return self._call("enqueue", lfn=str(lfn), dst_se=dst_se, kind=kind, src_se=src_se)

    def query(self, rid):
        return TransferRequest.from_dict(self._call("query", id=rid))

    def step(self):
        return self._call("step")

    def list(self):
        return [TransferRequest.from_dict(d) for d in self._call("list")]
