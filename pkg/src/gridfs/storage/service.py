"""Wire service and client stub for a storage element."""

from ..names import Pfn
from ..transport import Service


class SeService(Service):
    returns_payload = ("fetch_file",)

    def __init__(self, element, tokens=None):
        self.se = element
        self.tokens = None if tokens is None else set(tokens)

    def op_info(self, a, auth, _):
        return {"name": self.se.name, "site": self.se.site, "addr": self.se.addr,
                "protocol": self.se.plugin.protocol}

    def op_allocate_pfn(self, a, auth, _):
        pfn, vid = self.se.allocate_pfn(a.get("size_hint", 0), a.get("guid"), owner=auth,
                                        replace=bool(a.get("replace")))
        return {"pfn": str(pfn), "volume": vid}

    def op_write(self, a, auth, payload):
        return self.se.write_chunk(a["pfn"], a["offset"], payload or b"")

    def op_sync(self, a, auth, _):
        return self.se.sync(a["pfn"])

    def op_commit(self, a, auth, _):
        return self.se.commit(a["pfn"], a.get("expected_size"))

    def op_abort(self, a, auth, _):
        self.se.abort(a["pfn"])

    def op_store_file(self, a, auth, payload):
        return self.se.store_file(a["pfn"], payload or b"")

    def op_fetch_file(self, a, auth, _):
        return None, self.se.fetch_file(a["pfn"], a["offset"], a["length"])

    def op_sizeof(self, a, auth, _):
        return self.se.sizeof(a["pfn"])

    def op_rm(self, a, auth, _):
        self.se.remove(a["pfn"])

    def op_lslist(self, a, auth, _):
        return [[p, n] for p, n in self.se.lslist()]

    def op_volumes(self, a, auth, _):
        return self.se.volumes()

    def op_resync(self, a, auth, _):
        return self.se.resync()

    def op_expire(self, a, auth, _):
        return self.se.expire_files(a.get("now"))


class SeClient:
    def __init__(self, transport, addr, token=None):
        self.transport = transport
        self.addr = addr
        self.token = token

    def _call(self, op, payload=None, **args):
        return self.transport.call(self.addr, op, args, self.token, payload)

    def info(self):
        return self._call("info")[0]

    def allocate_pfn(self, size_hint=0, guid=None, replace=False):
        v, _ = self._call("allocate_pfn", size_hint=size_hint, guid=guid, replace=replace)
        return Pfn.parse(v["pfn"]), v["volume"]

    def write(self, pfn, offset, data):
        return self._call("write", payload=bytes(data), pfn=str(pfn), offset=offset)[0]

    def sync(self, pfn):
        return self._call("sync", pfn=str(pfn))[0]

    def commit(self, pfn, expected_size=None):
        return self._call("commit", pfn=str(pfn), expected_size=expected_size)[0]

    def abort(self, pfn):
        self._call("abort", pfn=str(pfn))

    def store_file(self, pfn, data):
        return self._call("store_file", payload=bytes(data), pfn=str(pfn))[0]

    def fetch_file(self, pfn, offset, length):
        return self._call("fetch_file", pfn=str(pfn), offset=offset, length=length)[1]

    def sizeof(self, pfn):
        return self._call("sizeof", pfn=str(pfn))[0]

    def rm(self, pfn):
        self._call("rm", pfn=str(pfn))

    def lslist(self):
        return [tuple(x) for x in self._call("lslist")[0]]

    def volumes(self):
        return self._call("volumes")[0]

    def resync(self):
        return self._call("resync")[0]

    def expire(self, now=None):
        return self._call("expire", now=now)[0]
