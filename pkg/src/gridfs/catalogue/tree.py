"""The virtual file catalogue.

Directories are tables of entries linked to their subdirectory tables. A file
entry carries its master PFN; further copies live in a separate replica
table, and a flat index maps every file LFN to the table that holds it.
"""

import random
import threading
from dataclasses import dataclass, field

from ..errors import (AlreadyExists, BadRequest, DirectoryNotEmpty, DuplicateGuid,
                      DuplicateReplica, InvalidPath, IsDirectory, NotADirectory, NotFound,
                      PermissionDenied, SizeMismatch)
from ..journal import Journal
from ..names import LfnPath, Pfn, canonical_guid, new_guid
from ..perms import EXECUTE, READ, WRITE, PermissionBits, Principal

META_SUFFIX = ".meta"
DB_PROTOCOL = "db"


@dataclass
class CatalogueEntry:
    basename: str
    guid: str
    size: int
    owner: str
    group: str
    perms: PermissionBits
    master_pfn: Pfn
    metadata: dict = field(default_factory=dict)
    content: str = None  # only for virtual DB files

    def metadata_text(self):
        return "\n".join("%s=%s" % (k, self.metadata[k]) for k in sorted(self.metadata))


@dataclass
class DirectoryTable:
    path: LfnPath
    owner: str
    group: str
    perms: PermissionBits
    entries: dict = field(default_factory=dict)
    subdirs: dict = field(default_factory=dict)

    def names(self):
        return sorted(set(self.entries) | set(self.subdirs))


class Catalogue:
    """In-memory catalogue with optional journaling.

    Every public method takes the acting :class:`Principal` first. Mutations
    are serialized by one lock; reads take the same lock briefly.
    """

    def __init__(self, superuser="admin", journal_path=None, snapshot_every=1000,
                 seed=None, db_host="catalogue"):
        self.superuser = superuser
        self.db_host = db_host
        self._rng = random.Random(seed)
        self._lock = threading.RLock()
        self._minted = set()
        self._reset()
        self.journal = None
        if journal_path:
            self.journal = Journal(journal_path, snapshot_every)
            self._recover()

    def _reset(self):
        self.root = DirectoryTable(LfnPath(), self.superuser, self.superuser,
                                   PermissionBits(0o755))
        self.replicas = {}  # LfnPath -> [Pfn]
        self.index = {}  # LfnPath -> DirectoryTable
        self.guids = {}  # guid -> LfnPath

    # -- permission helpers ----------------------------------------------

    def is_super(self, who):
        return who.user == self.superuser

    def _need(self, who, obj, want, what):
        if self.is_super(who):
            return
        if not obj.perms.allows(who, obj.owner, obj.group, want):
            raise PermissionDenied("%s lacks %s on %s" % (who.user, _bits_name(want), what))

    def _walk(self, who, path, check=True):
        """Directory table for ``path``; needs traverse on every directory on the way."""
        node = self.root
        for seg in path.segments:
            if check:
                self._need(who, node, EXECUTE, node.path)
            if seg in node.subdirs:
                node = node.subdirs[seg]
            elif seg in node.entries:
                raise NotADirectory("%s is a file" % node.path.child(seg))
            else:
                raise NotFound("no such directory: %s" % path)
        if check:
            self._need(who, node, EXECUTE, node.path)
        return node

    def _file(self, who, lfn, check=True):
        lfn = LfnPath.parse(lfn)
        if lfn.is_root:
            raise IsDirectory("/ is a directory")
        parent = self._walk(who, lfn.parent, check)
        if lfn.name in parent.subdirs:
            raise IsDirectory("%s is a directory" % lfn)
        entry = parent.entries.get(lfn.name)
        if entry is None:
            raise NotFound("no such file: %s" % lfn)
        return parent, entry

    def _node(self, who, path, check=True):
        """Either a DirectoryTable or a CatalogueEntry."""
        path = LfnPath.parse(path)
        if path.is_root:
            return self.root
        parent = self._walk(who, path.parent, check)
        if path.name in parent.subdirs:
            return parent.subdirs[path.name]
        if path.name in parent.entries:
            return parent.entries[path.name]
        raise NotFound("no such file or directory: %s" % path)

    def _creatable(self, who, path):
        path = LfnPath.parse(path)
        if path.is_root:
            raise AlreadyExists("/ exists")
        parent = self._walk(who, path.parent)
        self._need(who, parent, WRITE, parent.path)
        if path.name in parent.entries or path.name in parent.subdirs:
            raise AlreadyExists("%s exists" % path)
        return path, parent

    # -- directories ------------------------------------------------------

    def mkdir(self, who, path, perms=0o755):
        with self._lock:
            path, _ = self._creatable(who, path)
            self._apply("mkdir", {"path": str(path), "owner": who.user,
                                  "group": who.primary_group,
                                  "mode": PermissionBits.parse(perms).mode}, who)

    def rmdir(self, who, path):
        with self._lock:
            path = LfnPath.parse(path)
            if path.is_root:
                raise PermissionDenied("cannot remove /")
            parent = self._walk(who, path.parent)
            if path.name in parent.entries:
                raise NotADirectory("%s is a file" % path)
            d = parent.subdirs.get(path.name)
            if d is None:
                raise NotFound("no such directory: %s" % path)
            self._need(who, parent, WRITE, parent.path)
            if d.entries or d.subdirs:
                raise DirectoryNotEmpty("%s is not empty" % path)
            self._apply("rmdir", {"path": str(path)}, who)

    def list_dir(self, who, path):
        """Entries of a directory, including the read-only ``<name>.meta`` files."""
        with self._lock:
            d = self._walk(who, LfnPath.parse(path))
            self._need(who, d, READ, d.path)
            out = []
            for name in d.names():
                if name in d.subdirs:
                    out.append(_dir_info(d.subdirs[name]))
                else:
                    e = d.entries[name]
                    out.append(_file_info(e, len(self.replicas.get(d.path.child(name), ()))))
                    out.append(_meta_info(e))
            out.sort(key=lambda i: i["name"])
            return out

    def stat(self, who, path):
        with self._lock:
            path = LfnPath.parse(path)
            meta_base = _meta_base(path)
            if meta_base is not None and not self._exists(path):
                _, e = self._file(who, meta_base)
                return _meta_info(e)
            node = self._node(who, path)
            if isinstance(node, DirectoryTable):
                return _dir_info(node)
            return _file_info(node, len(self.replicas.get(path, ())))

    def exists(self, path):
        return self._exists(LfnPath.parse(str(path)))

    def _exists(self, path):
        try:
            self._node(None, path, check=False)
            return True
        except (NotFound, NotADirectory):
            return False

    # -- files ------------------------------------------------------------

    def check_create(self, who, lfn):
        """Privilege check done at write-open time; mutates nothing."""
        with self._lock:
            lfn = LfnPath.parse(lfn)
            if lfn.name.endswith(META_SUFFIX):
                raise InvalidPath("%s collides with metadata virtual files" % lfn)
            self._creatable(who, lfn)

    def mint_guid(self):
        with self._lock:
            while True:
                guid = new_guid(self._rng)
                if guid not in self.guids and guid not in self._minted:
                    self._minted.add(guid)
                    return guid

    def register_file(self, who, lfn, pfn, size, guid, perms=0o644, metadata=None):
        with self._lock:
            lfn = LfnPath.parse(lfn)
            if lfn.name.endswith(META_SUFFIX):
                raise InvalidPath("%s collides with metadata virtual files" % lfn)
            lfn, _ = self._creatable(who, lfn)
            guid = canonical_guid(guid)
            if guid in self.guids:
                raise DuplicateGuid("GUID %s already registered for %s" % (guid, self.guids[guid]))
            if int(size) < 0:
                raise BadRequest("negative size")
            self._apply("register_file", {
                "lfn": str(lfn), "pfn": str(Pfn.parse(pfn)), "size": int(size), "guid": guid,
                "owner": who.user, "group": who.primary_group,
                "mode": PermissionBits.parse(perms).mode, "metadata": dict(metadata or {}),
            }, who)

    def put_dbfile(self, who, lfn, content, perms=0o600):
        """Create a virtual DB file whose content lives in the catalogue itself."""
        with self._lock:
            lfn = LfnPath.parse(lfn)
            if lfn.name.endswith(META_SUFFIX):
                raise InvalidPath("%s collides with metadata virtual files" % lfn)
            lfn, _ = self._creatable(who, lfn)
            guid = self.mint_guid()
            pfn = Pfn(DB_PROTOCOL, self.db_host, 1, guid)
            self._apply("register_file", {
                "lfn": str(lfn), "pfn": str(pfn), "size": len(content.encode()), "guid": guid,
                "owner": who.user, "group": who.primary_group,
                "mode": PermissionBits.parse(perms).mode, "metadata": {}, "content": content,
            }, who)

    def read_dbfile(self, who, lfn):
        with self._lock:
            _, e = self._file(who, lfn)
            self._need(who, e, READ, lfn)
            if e.content is None:
                raise NotFound("%s is not a DB file" % lfn)
            return e.content

    def resolve(self, who, lfn):
        """(guid, size, [master PFN, replica PFNs...])."""
        with self._lock:
            lfn = LfnPath.parse(lfn)
            _, e = self._file(who, lfn)
            self._need(who, e, READ, lfn)
            return e.guid, e.size, [e.master_pfn] + list(self.replicas.get(lfn, ()))

    def guid_lookup(self, guid):
        with self._lock:
            lfn = self.guids.get(guid)
            return None if lfn is None else str(lfn)

    def add_replica(self, who, lfn, pfn, observed_size):
        with self._lock:
            lfn = LfnPath.parse(lfn)
            pfn = Pfn.parse(pfn)
            _, e = self._file(who, lfn)
            self._need(who, e, WRITE, lfn)
            if int(observed_size) != e.size:
                raise SizeMismatch("replica has %d bytes, entry has %d" % (observed_size, e.size))
            if pfn == e.master_pfn or pfn in self.replicas.get(lfn, ()):
                raise DuplicateReplica("%s already listed for %s" % (pfn, lfn))
            self._apply("add_replica", {"lfn": str(lfn), "pfn": str(pfn)}, who)

    def drop_location(self, who, lfn, pfn):
        """Forget one physical copy; the first replica is promoted if the master goes."""
        with self._lock:
            lfn = LfnPath.parse(lfn)
            pfn = Pfn.parse(pfn)
            _, e = self._file(who, lfn)
            self._need(who, e, WRITE, lfn)
            reps = self.replicas.get(lfn, [])
            if pfn != e.master_pfn and pfn not in reps:
                raise NotFound("%s is not a location of %s" % (pfn, lfn))
            if pfn == e.master_pfn and not reps:
                raise BadRequest("refusing to drop the only copy of %s" % lfn)
            self._apply("drop_location", {"lfn": str(lfn), "pfn": str(pfn)}, who)

    def remove(self, who, lfn):
        """Delete a file entry; returns every PFN that held its data."""
        with self._lock:
            lfn = LfnPath.parse(lfn)
            parent, e = self._file(who, lfn)
            self._need(who, parent, WRITE, parent.path)
            pfns = [e.master_pfn] + list(self.replicas.get(lfn, ()))
            self._apply("remove", {"lfn": str(lfn)}, who)
            return pfns

    def move(self, who, src, dst):
        with self._lock:
            src = LfnPath.parse(src)
            sparent, _ = self._file(who, src)
            self._need(who, sparent, WRITE, sparent.path)
            dst = LfnPath.parse(dst)
            if dst.name.endswith(META_SUFFIX):
                raise InvalidPath("%s collides with metadata virtual files" % dst)
            dst, _ = self._creatable(who, dst)
            self._apply("move", {"src": str(src), "dst": str(dst)}, who)

    def set_access(self, who, path, owner=None, group=None, perms=None):
        with self._lock:
            path = LfnPath.parse(path)
            node = self._node(who, path)
            if not self.is_super(who) and who.user != node.owner:
                raise PermissionDenied("%s does not own %s" % (who.user, path))
            args = {"path": str(path)}
            if owner is not None:
                args["owner"] = owner
            if group is not None:
                args["group"] = group
            if perms is not None:
                args["mode"] = PermissionBits.parse(perms).mode
            self._apply("set_access", args, who)

    def read_metadata(self, who, lfn):
        with self._lock:
            lfn = LfnPath.parse(lfn)
            base = _meta_base(lfn)
            if base is not None and not self._exists(lfn):
                lfn = base
            _, e = self._file(who, lfn)
            self._need(who, e, READ, lfn)
            return e.metadata_text()

    def set_metadata(self, who, lfn, tags, replace=False):
        with self._lock:
            lfn = LfnPath.parse(lfn)
            _, e = self._file(who, lfn)
            self._need(who, e, WRITE, lfn)
            for k in tags:
                if "=" in k or "\n" in k or "\n" in str(tags[k]):
                    raise BadRequest("bad metadata tag %r" % k)
            self._apply("set_metadata", {"lfn": str(lfn), "tags": {k: str(v) for k, v in tags.items()},
                                         "replace": bool(replace)}, who)

    # -- the mutation kernel (also used by journal replay) ---------------

    def _apply(self, op, args, who=None, replay=False):
        getattr(self, "_do_" + op)(**args)
        if self.journal is not None and not replay:
            self.journal.append(op, args, who.user if who else None)
            if self.journal.snapshot_due():
                self.journal.write_snapshot(self._snapshot_lines())

    def _do_mkdir(self, path, owner, group, mode):
        path = LfnPath.parse(path)
        parent = self._walk(None, path.parent, check=False)
        parent.subdirs[path.name] = DirectoryTable(path, owner, group, PermissionBits(mode))

    def _do_rmdir(self, path):
        path = LfnPath.parse(path)
        parent = self._walk(None, path.parent, check=False)
        del parent.subdirs[path.name]

    def _do_register_file(self, lfn, pfn, size, guid, owner, group, mode, metadata, content=None):
        lfn = LfnPath.parse(lfn)
        parent = self._walk(None, lfn.parent, check=False)
        parent.entries[lfn.name] = CatalogueEntry(lfn.name, guid, size, owner, group,
                                                  PermissionBits(mode), Pfn.parse(pfn),
                                                  dict(metadata), content)
        self.index[lfn] = parent
        self.guids[guid] = lfn
        self._minted.discard(guid)

    def _do_add_replica(self, lfn, pfn):
        self.replicas.setdefault(LfnPath.parse(lfn), []).append(Pfn.parse(pfn))

    def _do_drop_location(self, lfn, pfn):
        lfn, pfn = LfnPath.parse(lfn), Pfn.parse(pfn)
        e = self.index[lfn].entries[lfn.name]
        reps = self.replicas.get(lfn, [])
        if pfn == e.master_pfn:
            e.master_pfn = reps.pop(0)
        else:
            reps.remove(pfn)
        if not reps:
            self.replicas.pop(lfn, None)

    def _do_remove(self, lfn):
        lfn = LfnPath.parse(lfn)
        parent = self.index.pop(lfn)
        e = parent.entries.pop(lfn.name)
        self.replicas.pop(lfn, None)
        self.guids.pop(e.guid, None)

    def _do_move(self, src, dst):
        src, dst = LfnPath.parse(src), LfnPath.parse(dst)
        sparent = self.index.pop(src)
        e = sparent.entries.pop(src.name)
        dparent = self._walk(None, dst.parent, check=False)
        e.basename = dst.name
        dparent.entries[dst.name] = e
        self.index[dst] = dparent
        self.guids[e.guid] = dst
        if src in self.replicas:
            self.replicas[dst] = self.replicas.pop(src)

    def _do_set_access(self, path, owner=None, group=None, mode=None):
        node = self._node(None, path, check=False)
        if owner is not None:
            node.owner = owner
        if group is not None:
            node.group = group
        if mode is not None:
            node.perms = PermissionBits(mode)

    def _do_set_metadata(self, lfn, tags, replace):
        lfn = LfnPath.parse(lfn)
        e = self.index[lfn].entries[lfn.name]
        if replace:
            e.metadata = {}
        e.metadata.update(tags)

    # -- persistence ------------------------------------------------------

    def _snapshot_lines(self):
        lines = []
        stack = [self.root]
        while stack:
            d = stack.pop()
            lines.append({"kind": "dir", "path": str(d.path), "owner": d.owner,
                          "group": d.group, "mode": d.perms.mode})
            for name in sorted(d.entries):
                e = d.entries[name]
                lfn = d.path.child(name)
                lines.append({"kind": "file", "lfn": str(lfn), "pfn": str(e.master_pfn),
                              "size": e.size, "guid": e.guid, "owner": e.owner,
                              "group": e.group, "mode": e.perms.mode,
                              "metadata": e.metadata, "content": e.content,
                              "replicas": [str(p) for p in self.replicas.get(lfn, ())]})
            stack.extend(d.subdirs[n] for n in sorted(d.subdirs, reverse=True))
        return lines

    def snapshot(self):
        with self._lock:
            if self.journal is not None:
                self.journal.write_snapshot(self._snapshot_lines())

    def _recover(self):
        snap, records = self.journal.load()
        for line in snap or ():
            kind = line.get("kind")
            if kind == "dir":
                path = LfnPath.parse(line["path"])
                if path.is_root:
                    self.root.owner, self.root.group = line["owner"], line["group"]
                    self.root.perms = PermissionBits(line["mode"])
                else:
                    self._do_mkdir(line["path"], line["owner"], line["group"], line["mode"])
            elif kind == "file":
                reps = line.pop("replicas")
                line.pop("kind")
                self._do_register_file(**line)
                for p in reps:
                    self._do_add_replica(line["lfn"], p)
        for rec in records:
            self._apply(rec["op"], rec["args"], replay=True)

    def close(self):
        if self.journal is not None:
            self.journal.close()

    # -- introspection used by tests and tools ----------------------------

    def walk_files(self):
        """Every file LFN found by a root-down tree walk, with its entry."""
        out = {}
        stack = [self.root]
        while stack:
            d = stack.pop()
            for name, e in d.entries.items():
                out[d.path.child(name)] = e
            stack.extend(d.subdirs.values())
        return out


def _bits_name(want):
    return {READ: "read", WRITE: "write", EXECUTE: "traverse"}.get(want, "access")


def _meta_base(path):
    if path.name.endswith(META_SUFFIX) and len(path.name) > len(META_SUFFIX):
        return path.parent.child(path.name[:-len(META_SUFFIX)])
    return None


def _dir_info(d):
    return {"name": d.path.name or "/", "type": "dir", "mode": str(d.perms),
            "owner": d.owner, "group": d.group, "size": 0}


def _file_info(e, nreplicas=0):
    return {"name": e.basename, "type": "file", "mode": str(e.perms), "owner": e.owner,
            "group": e.group, "size": e.size, "guid": e.guid, "replicas": nreplicas}


def _meta_info(e):
    return {"name": e.basename + META_SUFFIX, "type": "meta",
            "mode": "%03o" % (e.perms.mode & 0o444), "owner": e.owner, "group": e.group,
            "size": len(e.metadata_text().encode())}

