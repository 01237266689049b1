"""Client side of an aiod session."""

from .server import MAX_REDIRECTS, READ_MODE, open_following


class AiodSession:
    def __init__(self, transport, auth, addr, info):
        self.transport = transport
        self.auth = auth
        self.addr = addr
        self.id = info["session"]
        self.size = info["size"]
        self.page_size = info["page_size"]
        self.guid = info["guid"]

    @classmethod
    def open(cls, transport, auth, route, ticket, mode=READ_MODE, access="sequential",
             size_hint=None, max_redirects=MAX_REDIRECTS):
        args = {"ticket": ticket.to_dict(), "mode": mode, "access": access,
                "size_hint": size_hint}
        addr, info = open_following(transport, route, args, auth, max_redirects)
        return cls(transport, auth, addr, info)

    def _call(self, op, payload=None, **args):
        return self.transport.call(self.addr, op, dict(args, session=self.id), self.auth, payload)

    def read(self, offset, size):
        return self._call("READ", offset=offset, size=size)[1]

    def write(self, offset, data):
        return self._call("WRITE", payload=bytes(data), offset=offset)[0]

    def sync(self):
        return self._call("SYNC")[0]

    def preload(self, plan=None, wait=False):
        return self._call("PRELOAD", plan=plan, wait=wait)[0]

    def close(self):
        return self._call("CLOSE")[0]
