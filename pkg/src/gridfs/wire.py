"""Length-prefixed framing used by every service.

A message is a structured frame (4-byte big-endian length, JSON body)
optionally followed by a raw-bytes frame. When a raw frame follows, the
structured body declares its length in ``data_len``.
"""

import json
import struct

from .errors import BadRequest, TransportError

_LEN = struct.Struct(">I")
MAX_FRAME = 0xFFFFFFFF


def frame(body_bytes):
    if len(body_bytes) > MAX_FRAME:
        raise BadRequest("frame too large: %d bytes" % len(body_bytes))
    return _LEN.pack(len(body_bytes)) + body_bytes


def dumps(body):
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def encode(body, payload=None):
    """Encode a structured body plus optional raw payload into wire bytes."""
    if payload is not None:
        body = dict(body, data_len=len(payload))
        return frame(dumps(body)) + frame(bytes(payload))
    return frame(dumps(body))


def decode(buf):
    """Inverse of :func:`encode` for a complete in-memory message."""
    body, used = _take(buf, 0)
    body = json.loads(body)
    payload = None
    if "data_len" in body:
        payload, used = _take(buf, used)
        if len(payload) != body["data_len"]:
            raise BadRequest("data_len mismatch")
        body = dict(body)
        del body["data_len"]
    if used != len(buf):
        raise BadRequest("trailing bytes after message")
    return body, payload


def _take(buf, pos):
    if len(buf) - pos < 4:
        raise BadRequest("truncated frame header")
    (n,) = _LEN.unpack_from(buf, pos)
    pos += 4
    if len(buf) - pos < n:
        raise BadRequest("truncated frame body")
    return bytes(buf[pos:pos + n]), pos + n


def request(op, args, auth=None):
    return {"op": op, "args": args, "auth": auth}


def ok(value=None):
    return {"ok": True, "value": value}


# stream helpers for real sockets

def _recv_exact(sock, n):
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise TransportError("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_message(sock):
    (n,) = _LEN.unpack(_recv_exact(sock, 4))
    body = json.loads(_recv_exact(sock, n))
    payload = None
    if "data_len" in body:
        (m,) = _LEN.unpack(_recv_exact(sock, 4))
        payload = _recv_exact(sock, m)
        del body["data_len"]
    return body, payload


def write_message(sock, body, payload=None):
    sock.sendall(encode(body, payload))
