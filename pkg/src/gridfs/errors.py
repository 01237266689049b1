"""Error types shared by every grid service.

Every error carries a ``code`` which is the exact name used on the wire
(``{"ok": false, "error": <code>}``) and which the command line maps to a
process exit code.
"""


class GridError(Exception):
    code = "GridError"

    def __init__(self, msg="", **extra):
        super().__init__(msg or self.code)
        self.msg = msg or self.code
        self.extra = extra

    def to_wire(self):
        out = {"ok": False, "error": self.code, "msg": self.msg}
        out.update(self.extra)
        return out


_REGISTRY = {}


def _error(name, base=GridError):
    cls = type(name, (base,), {"code": name})
    _REGISTRY[name] = cls
    return cls


_REGISTRY["GridError"] = GridError

# catalogue
NotFound = _error("NotFound")
PermissionDenied = _error("PermissionDenied")
AlreadyExists = _error("AlreadyExists")
DuplicateGuid = _error("DuplicateGuid")
SizeMismatch = _error("SizeMismatch")
DuplicateReplica = _error("DuplicateReplica")
IsDirectory = _error("IsDirectory")
NotADirectory = _error("NotADirectory")
DirectoryNotEmpty = _error("DirectoryNotEmpty")
InvalidPath = _error("InvalidPath")

# storage element
NoSpace = _error("NoSpace")
NotAllocated = _error("NotAllocated")
QuotaExceeded = _error("QuotaExceeded")
BackendFailure = _error("BackendFailure")
RangeError = _error("RangeError")
ProducerFailure = _error("ProducerFailure")

# access
BadHandle = _error("BadHandle")
NonSequentialWrite = _error("NonSequentialWrite")
SizeValidationFailed = _error("SizeValidationFailed")
RegistrationFailed = _error("RegistrationFailed")
TransportError = _error("TransportError")
Unreachable = _error("Unreachable", TransportError)

# transfer queue
AlreadyReplicated = _error("AlreadyReplicated")
UnknownSe = _error("UnknownSe")

# aiod
TicketInvalid = _error("TicketInvalid")
NoFreshReports = _error("NoFreshReports")

# simnet
LinkDown = _error("LinkDown", TransportError)
NoRoute = _error("NoRoute", TransportError)
UnknownNode = _error("UnknownNode")

# protocol plumbing
BadRequest = _error("BadRequest")
AuthFailed = _error("AuthFailed")
InternalError = _error("InternalError")


class Redirect(GridError):
    """Not a failure: the gate keeper asks the client to retry at ``addr``."""

    code = "Redirect"

    def __init__(self, addr, msg=""):
        super().__init__(msg or "redirect to %s" % addr, addr=addr)
        self.addr = addr


_REGISTRY["Redirect"] = Redirect


def from_wire(resp):
    """Rebuild the exception described by an error response."""
    code = resp.get("error", "GridError")
    msg = resp.get("msg", "")
    if code == "Redirect":
        return Redirect(resp["addr"], msg)
    cls = _REGISTRY.get(code, GridError)
    extra = {k: v for k, v in resp.items() if k not in ("ok", "error", "msg")}
    err = cls(msg, **extra)
    if cls is GridError:
        err.code = code
    return err


def error_names():
    return sorted(_REGISTRY)
