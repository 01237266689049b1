"""Wire service and client stub for the catalogue."""

from ..errors import AuthFailed, UnknownSe
from ..names import Pfn
from ..perms import Principal
from ..transport import Service
from .tree import Catalogue


class CatalogueService(Service):
    """Serves a :class:`Catalogue` plus the site's storage element registry.

    ``users`` maps an auth token to ``{"user": ..., "groups": [...]}``;
    ``ses`` maps an SE name to ``{"addr": "host:port", "site": ...}``.
    """

    def __init__(self, catalogue, users, ses=None):
        self.catalogue = catalogue
        self.users = {tok: Principal.from_dict(u) for tok, u in users.items()}
        self.ses = dict(ses or {})

    @classmethod
    def from_config(cls, cfg, seed=None, db_host=None):
        cat = Catalogue(superuser=cfg.get("superuser", "admin"),
                        journal_path=cfg.get("journal_path"),
                        snapshot_every=cfg.get("snapshot_every_n_ops", 1000),
                        seed=seed, db_host=db_host or cfg.get("listen", "catalogue:1").split(":")[0])
        service = cls(cat, cfg.get("users", {}), cfg.get("ses", {}))
        if cfg.get("create_homes", True):
            service.bootstrap_homes()
        return service

    def bootstrap_homes(self):
        """Give every user ``/<user>`` and a credential file ``/<user>/.cred``.

        Existing entries (say, replayed from the journal) are left alone.
        """
        su = self.catalogue.superuser
        admin = Principal(su, [su])
        for token, who in sorted(self.users.items()):
            if who.user == su:
                continue
            home = "/%s" % who.user
            if not self.catalogue.exists(home):
                self.catalogue.mkdir(admin, home)
                self.catalogue.set_access(admin, home, owner=who.user, group=who.primary_group)
            cred = home + "/.cred"
            if not self.catalogue.exists(cred):
                self.catalogue.put_dbfile(admin, cred, token)
                self.catalogue.set_access(admin, cred, owner=who.user, group=who.primary_group)

    def authenticate(self, auth):
        if auth not in self.users:
            raise AuthFailed("unknown token")

    def _who(self, auth):
        return self.users[auth]

    # directories
    def op_mkdir(self, a, auth, _):
        self.catalogue.mkdir(self._who(auth), a["path"], a.get("perms", "755"))

    def op_rmdir(self, a, auth, _):
        self.catalogue.rmdir(self._who(auth), a["path"])

    def op_list_dir(self, a, auth, _):
        return self.catalogue.list_dir(self._who(auth), a["path"])

    def op_stat(self, a, auth, _):
        return self.catalogue.stat(self._who(auth), a["path"])

    # files
    def op_check_create(self, a, auth, _):
        self.catalogue.check_create(self._who(auth), a["lfn"])

    def op_mint_guid(self, a, auth, _):
        return self.catalogue.mint_guid()

    def op_register_file(self, a, auth, _):
        self.catalogue.register_file(self._who(auth), a["lfn"], a["pfn"], a["size"], a["guid"],
                                     a.get("perms", "644"), a.get("metadata"))

    def op_resolve(self, a, auth, _):
        guid, size, pfns = self.catalogue.resolve(self._who(auth), a["lfn"])
        return {"guid": guid, "size": size, "pfns": [str(p) for p in pfns]}

    def op_guid_lookup(self, a, auth, _):
        return self.catalogue.guid_lookup(a["guid"])

    def op_add_replica(self, a, auth, _):
        self.catalogue.add_replica(self._who(auth), a["lfn"], a["pfn"], a["observed_size"])

    def op_drop_location(self, a, auth, _):
        self.catalogue.drop_location(self._who(auth), a["lfn"], a["pfn"])

    def op_remove(self, a, auth, _):
        return [str(p) for p in self.catalogue.remove(self._who(auth), a["lfn"])]

    def op_move(self, a, auth, _):
        self.catalogue.move(self._who(auth), a["src"], a["dst"])

    def op_set_access(self, a, auth, _):
        self.catalogue.set_access(self._who(auth), a["path"], a.get("owner"), a.get("group"),
                                  a.get("perms"))

    def op_read_metadata(self, a, auth, _):
        return self.catalogue.read_metadata(self._who(auth), a["lfn"])

    def op_set_metadata(self, a, auth, _):
        self.catalogue.set_metadata(self._who(auth), a["lfn"], a["tags"], a.get("replace", False))

    def op_put_dbfile(self, a, auth, _):
        self.catalogue.put_dbfile(self._who(auth), a["lfn"], a["content"], a.get("perms", "600"))

    def op_read_dbfile(self, a, auth, _):
        return self.catalogue.read_dbfile(self._who(auth), a["lfn"])

    # session and site information
    def op_whoami(self, a, auth, _):
        return self._who(auth).to_dict()

    def op_list_ses(self, a, auth, _):
        return self.ses

    def op_se_info(self, a, auth, _):
        if a["name"] not in self.ses:
            raise UnknownSe("unknown storage element %s" % a["name"])
        return self.ses[a["name"]]


class CatalogueClient:
    """Typed wrapper over the wire ops; values come back as names, not text."""

    def __init__(self, transport, addr, token):
        self.transport = transport
        self.addr = addr
        self.token = token

    def _call(self, op, **args):
        value, _ = self.transport.call(self.addr, op, args, self.token)
        return value

    def mkdir(self, path, perms="755"):
        self._call("mkdir", path=str(path), perms=str(perms))

    def rmdir(self, path):
        self._call("rmdir", path=str(path))

    def list_dir(self, path):
        return self._call("list_dir", path=str(path))

    def stat(self, path):
        return self._call("stat", path=str(path))

    def check_create(self, lfn):
        self._call("check_create", lfn=str(lfn))

    def mint_guid(self):
        return self._call("mint_guid")

    def register_file(self, lfn, pfn, size, guid, perms="644", metadata=None):
        self._call("register_file", lfn=str(lfn), pfn=str(pfn), size=size, guid=guid,
                   perms=str(perms), metadata=metadata)

    def resolve(self, lfn):
        v = self._call("resolve", lfn=str(lfn))
        return v["guid"], v["size"], [Pfn.parse(p) for p in v["pfns"]]

    def guid_lookup(self, guid):
        return self._call("guid_lookup", guid=guid)

    def add_replica(self, lfn, pfn, observed_size):
        self._call("add_replica", lfn=str(lfn), pfn=str(pfn), observed_size=observed_size)

    def drop_location(self, lfn, pfn):
        self._call("drop_location", lfn=str(lfn), pfn=str(pfn))

    def remove(self, lfn):
        return [Pfn.parse(p) for p in self._call("remove", lfn=str(lfn))]

    def move(self, src, dst):
        self._call("move", src=str(src), dst=str(dst))

    def set_access(self, path, owner=None, group=None, perms=None):
        self._call("set_access", path=str(path), owner=owner, group=group,
                   perms=None if perms is None else str(perms))

    def read_metadata(self, lfn):
        return self._call("read_metadata", lfn=str(lfn))

    def set_metadata(self, lfn, tags, replace=False):
        self._call("set_metadata", lfn=str(lfn), tags=tags, replace=replace)

    def put_dbfile(self, lfn, content, perms="600"):
        self._call("put_dbfile", lfn=str(lfn), content=content, perms=str(perms))

    def read_dbfile(self, lfn):
        return self._call("read_dbfile", lfn=str(lfn))

    def whoami(self):
        return Principal.from_dict(self._call("whoami"))

    def list_ses(self):
        return self._call("list_ses")

    def se_info(self, name):
        return self._call("se_info", name=name)
