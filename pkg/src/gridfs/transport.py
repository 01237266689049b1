"""One transport abstraction, two implementations.

:class:`SimTransport` carries encoded frames across a :class:`SimNet` and
runs the destination service's handler in the calling task.
:class:`TcpTransport` speaks the same frames over real sockets to a
:func:`serve_tcp` server. Services never know which one they are behind.
"""

import logging
import socket
import socketserver
import threading

from . import wire
from .errors import (AuthFailed, BadRequest, GridError, InternalError, TransportError,
                     from_wire)

log = logging.getLogger(__name__)


class Service:
    """Base class for request dispatch: ``op_<name>(args, auth, payload)``.

    A handler returns either a plain value or ``(value, payload_bytes)`` when
    ``returns_payload`` lists the op.
    """

    returns_payload = ()
    #: None accepts any token; otherwise the set of accepted tokens
    tokens = None

    def authenticate(self, auth):
        if self.tokens is not None and auth not in self.tokens:
            raise AuthFailed("unknown token")

    def handle(self, body, payload=None):
        try:
            op = body.get("op")
            fn = getattr(self, "op_" + str(op), None)
            if fn is None:
                raise BadRequest("unknown op %r" % op)
            self.authenticate(body.get("auth"))
            out = fn(body.get("args") or {}, body.get("auth"), payload)
            if op in self.returns_payload:
                value, data = out
                return wire.ok(value), data
            return wire.ok(out), None
        except GridError as exc:
            return exc.to_wire(), None
        except Exception as exc:  # never let a handler bug kill the server
            log.exception("handler %s failed", body.get("op"))
            return InternalError("%s: %s" % (type(exc).__name__, exc)).to_wire(), None


class Transport:
    def call(self, addr, op, args, auth=None, payload=None):
        """Send one request; returns (value, payload) or raises the remote error."""
        raise NotImplementedError

    @staticmethod
    def _unwrap(resp, payload):
        if resp.get("ok"):
            return resp.get("value"), payload
        raise from_wire(resp)


class SimTransport(Transport):
    def __init__(self, net, registry, local_addr):
        self.net = net
        self.clock = net.clock
        self.registry = registry
        self.local_addr = local_addr

    def call(self, addr, op, args, auth=None, payload=None):
        service = self.registry.get(addr)
        msg = wire.encode(wire.request(op, args, auth), payload)
        self._hop(self.local_addr, addr, msg, op)
        if service is None:
            raise TransportError("nothing listening at %s" % addr)
        body, data = wire.decode(msg)
        resp, out = service.handle(body, data)
        reply = wire.encode(resp, out)
        self._hop(addr, self.local_addr, reply, op + ".reply")
        resp, out = wire.decode(reply)
        return self._unwrap(resp, out)

    def _hop(self, src, dst, msg, op):
        if src == dst:
            return
        arrival, fid, hops = self.net.deliver(src, dst, len(msg), op)
        self.clock.sleep_until(arrival)
        if not self.net.arrive(fid, src, dst, len(msg), hops, op):
            raise TransportError("frame %s -> %s dropped" % (src, dst))


class Registry(dict):
    """addr -> Service for one simulated deployment."""


def split_addr(addr):
    host, _, port = addr.rpartition(":")
    return host, int(port)


class TcpTransport(Transport):
    """Keeps one connection per (thread, address) and rebuilds it after a failure."""

    def __init__(self, timeout=30.0):
        self.timeout = timeout
        self._conns = {}
        self._lock = threading.Lock()

    def call(self, addr, op, args, auth=None, payload=None):
        body = wire.request(op, args, auth)
        for attempt in (0, 1):
            sock = self._connect(addr)
            try:
                wire.write_message(sock, body, payload)
                resp, data = wire.read_message(sock)
                break
            except (OSError, TransportError) as exc:
                self._drop(addr)
                if attempt:
                    raise TransportError("%s: %s" % (addr, exc)) from exc
        return self._unwrap(resp, data)

    def _connect(self, addr):
        key = (threading.get_ident(), addr)
        with self._lock:
            sock = self._conns.get(key)
        if sock is None:
            try:
                sock = socket.create_connection(split_addr(addr), timeout=self.timeout)
            except OSError as exc:
                raise TransportError("cannot connect to %s: %s" % (addr, exc)) from exc
            with self._lock:
                self._conns[key] = sock
        return sock

    def _drop(self, addr, key=None):
        key = key or (threading.get_ident(), addr)
        with self._lock:
            sock = self._conns.pop(key, None)
        if sock is not None:
            sock.close()

    def close(self):
        for key in list(self._conns):
            self._drop(key[1], key)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service = self.server.service
        while True:
            try:
                body, payload = wire.read_message(self.request)
            except (TransportError, OSError, ValueError):
                return
            resp, out = service.handle(body, payload)
            try:
                wire.write_message(self.request, resp, out)
            except OSError:
                return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve_tcp(service, host, port, background=True):
    """Expose a service on a TCP port; returns the server object."""
    server = _Server((host, port), _Handler)
    server.service = service
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    else:
        server.serve_forever()
    return server
