"""The storage element: plug-in, volume manager, uploads and local cache."""

import logging
import os
import threading
import time
from dataclasses import dataclass, field

from ..errors import (BackendFailure, BadRequest, NoSpace, NonSequentialWrite, NotAllocated,
                      NotFound, QuotaExceeded, RangeError, SizeValidationFailed)
from ..names import Pfn, is_guid, new_guid
from .cache import LocalDiskCache
from .lvm import LvmState, Volume
from .plugins import IN, OUT, make_plugin

log = logging.getLogger(__name__)


@dataclass
class SeConfig:
    se_name: str
    plugin: str
    listen: str
    cache_dir: str
    volumes: list
    site: str = ""
    cache_budget_bytes: int = 1 << 30
    store_root: str = None
    tokens: list = None

    @classmethod
    def from_dict(cls, d):
        vols = [v if isinstance(v, Volume) else Volume.from_config(v) for v in d["volumes"]]
        if not vols:
            raise BadRequest("a storage element needs at least one volume")
        return cls(d["se_name"], d.get("plugin", "file"), d["listen"], d["cache_dir"], vols,
                   d.get("site", ""), int(d.get("cache_budget_bytes", 1 << 30)),
                   d.get("store_root"), d.get("tokens"))


@dataclass
class _Upload:
    volume: str
    staged: str
    written: int = 0
    synced: int = 0
    owner: str = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class StorageElement:
    def __init__(self, config, plugin=None, now=None):
        self.config = config
        self.name = config.se_name
        self.site = config.site
        host, _, port = config.listen.rpartition(":")
        self.addr = config.listen
        self.plugin = plugin or make_plugin(config.plugin, host, int(port),
                                            config.store_root or os.path.join(config.cache_dir, "store"))
        self.lvm = LvmState(list(config.volumes))
        self.now = now or (lambda: int(time.time()))
        self.cache = LocalDiskCache(os.path.join(config.cache_dir, "files"),
                                    config.cache_budget_bytes)
        self.staging_dir = os.path.join(config.cache_dir, "staging")
        os.makedirs(self.staging_dir, exist_ok=True)
        self._uploads = {}
        self._lock = threading.RLock()
        for vol in self.lvm.volumes.values():
            self.plugin.mkdir(vol.mount_point)

    # -- helpers ----------------------------------------------------------

    def _path(self, pfn):
        pfn = Pfn.parse(pfn)
        if pfn.addr != self.addr:
            raise NotFound("%s does not belong to %s" % (pfn, self.name))
        return pfn.direntry

    def volumes(self):
        return {vid: {"mount_point": v.mount_point, "capacity": v.capacity, "used": v.used,
                      "reserved": self.lvm.reserved(vid)}
                for vid, v in self.lvm.volumes.items()}

    # -- allocation and upload --------------------------------------------

    def allocate_pfn(self, size_hint=0, guid=None, owner=None, replace=False):
        """Reserve space for a new file; returns (Pfn, volume id).

        ``replace`` first throws away any earlier allocation or stored file
        for the same GUID. Only a caller that knows those are unregistered
        leftovers (a retried transfer) should ask for it.
        """
        guid = guid or new_guid()
        if replace:
            self._drop_guid(guid)
        with self._lock:
            vid = self.lvm.choose_volume(int(size_hint))
            vol = self.lvm.volumes[vid]
            path = "%s/%s/%s" % (vol.mount_point, guid[:2], guid)
            if path in self.lvm.placements or path in self._uploads:
                raise BadRequest("PFN for %s already allocated" % guid)
            self.lvm.reserve(path, vid, int(size_hint))
            staged = os.path.join(self.staging_dir, path.replace("/", "%"))
            open(staged, "wb").close()
            self._uploads[path] = _Upload(vid, staged, owner=owner)
        return self.plugin.url(path), vid

    def _drop_guid(self, guid):
        for vol in self.lvm.volumes.values():
            path = "%s/%s/%s" % (vol.mount_point, guid[:2], guid)
            up = self._uploads.get(path)
            if up is not None:
                with up.lock:
                    self._discard(path, up)
            elif path in self.lvm.placements:
                self.remove(self.plugin.url(path))

    def _upload(self, pfn):
        path = self._path(pfn)
        up = self._uploads.get(path)
        if up is None:
            raise NotAllocated("%s is not an open allocation" % pfn)
        return path, up

    def write_chunk(self, pfn, offset, data, enforce_space=True):
        """Append bytes to an allocation; the stream must not change offset."""
        path, up = self._upload(pfn)
        with up.lock:
            if offset != up.written:
                raise NonSequentialWrite("expected offset %d, got %d" % (up.written, offset))
            if enforce_space:
                with self._lock:
                    free = self.lvm.free(up.volume, excluding=path)
                if up.written + len(data) > free:
                    raise NoSpace("volume %s cannot hold %d bytes" % (up.volume, up.written + len(data)))
            with open(up.staged, "ab") as fh:
                fh.write(data)
            up.written += len(data)
            return up.written

    def sync(self, pfn):
        """Make every accepted byte durable in the store before returning."""
        path, up = self._upload(pfn)
        with up.lock:
            if up.written == up.synced:
                return up.synced
            with open(up.staged, "ab") as fh:
                fh.flush()
                os.fsync(fh.fileno())
            self.plugin.cp(up.staged, path, IN)
            up.synced = up.written
            return up.synced

    def commit(self, pfn, expected_size=None):
        """Validate the staged size and move the file into the store."""
        path, up = self._upload(pfn)
        with up.lock:
            actual = os.path.getsize(up.staged)
            if expected_size is not None and actual != int(expected_size):
                self._discard(path, up)
                raise SizeValidationFailed("staged %d bytes, client sent %d" % (actual, expected_size))
            with self._lock:
                if actual > self.lvm.free(up.volume, excluding=path):
                    self._discard(path, up)
                    raise QuotaExceeded("%d bytes do not fit on %s" % (actual, up.volume))
                try:
                    self.plugin.cp(up.staged, path, IN)
                except BackendFailure:
                    self._discard(path, up)
                    raise
                self.lvm.commit(path, actual, self.now())
                self._uploads.pop(path, None)
            os.remove(up.staged)
            return actual

    def abort(self, pfn):
        path, up = self._upload(pfn)
        self._discard(path, up)

    def _discard(self, path, up):
        with self._lock:
            self._uploads.pop(path, None)
            self.lvm.release(path)
        if os.path.exists(up.staged):
            os.remove(up.staged)
        if up.synced:
            try:
                self.plugin.rm(path)
            except NotFound:
                pass

    def store_file(self, pfn, data):
        """Whole-file store into an allocated PFN; ``data`` is bytes or an iterable of chunks."""
        chunks = [data] if isinstance(data, (bytes, bytearray, memoryview)) else data
        path, up = self._upload(pfn)
        for chunk in chunks:
            self.write_chunk(pfn, up.written, bytes(chunk), enforce_space=False)
        return self.commit(pfn)

    # -- reading ----------------------------------------------------------

    def sizeof(self, pfn):
        return self.plugin.sizeof(self._path(pfn))

    def _cache_key(self, path):
        base = path.rsplit("/", 1)[-1]
        return base if is_guid(base) else "p:" + path

    def fetch_file(self, pfn, offset, length):
        path = self._path(pfn)
        if path in self._uploads:
            raise NotFound("%s is not committed" % pfn)
        size = self.plugin.sizeof(path)
        offset, length = int(offset), int(length)
        if offset < 0 or length < 0 or offset + length > size:
            raise RangeError("range %d+%d outside %d-byte file" % (offset, length, size))
        local = self.cache_get_or_pull(self._cache_key(path),
                                       lambda dest: self.plugin.cp(dest, path, OUT))
        with open(local, "rb") as fh:
            fh.seek(offset)
            return fh.read(length)

    def cache_get_or_pull(self, key, producer):
        return self.cache.get_or_pull(key, producer)

    def lslist(self):
        return self.plugin.lslist()

    # -- deletion, lifetime, resynchronisation ----------------------------

    def remove(self, pfn):
        path = self._path(pfn)
        with self._lock:
            if path in self._uploads:
                raise BadRequest("%s is still being written" % pfn)
            self.plugin.rm(path)
            self.lvm.drop(path)
        self.cache.invalidate(self._cache_key(path))

    def expire_files(self, now=None):
        now = self.now() if now is None else now
        removed, failed = [], []
        with self._lock:
            due = sorted(p for p, pl in self.lvm.placements.items()
                         if pl.expiry is not None and pl.expiry <= now)
            for path in due:
                try:
                    self.plugin.rm(path)
                except NotFound:
                    pass
                except BackendFailure as exc:
                    failed.append((path, str(exc)))
                    continue
                self.lvm.drop(path)
                self.cache.invalidate(self._cache_key(path))
                removed.append(path)
        if failed:
            raise BackendFailure("could not expire %d files" % len(failed),
                                 removed=removed, failed=[p for p, _ in failed])
        return removed

    def resync(self):
        """Reconcile placements with what the plug-in actually holds."""
        report = {"added": 0, "removed": 0, "size_corrected": 0}
        with self._lock:
            listed = dict(self.plugin.lslist())
            for path in list(self.lvm.placements):
                if path not in listed:
                    self.lvm.drop(path)
                    self.cache.invalidate(self._cache_key(path))
                    report["removed"] += 1
            now = self.now()
            for path, size in sorted(listed.items()):
                if path in self._uploads:
                    continue
                pl = self.lvm.placements.get(path)
                if pl is None:
                    if self.lvm.adopt(path, size, now) is not None:
                        report["added"] += 1
                elif pl.size != size:
                    pl.size = size
                    self.cache.invalidate(self._cache_key(path))
                    report["size_corrected"] += 1
            self.lvm.recompute_used()
        return report

    def link(self, src_pfn, dst_path):
        """Link inside one volume only."""
        src = self._path(src_pfn)
        vs, vd = self.lvm.volume_for(src), self.lvm.volume_for(dst_path)
        if vs is None or vd is None or vs.id != vd.id:
            raise BadRequest("links across volumes are not supported")
        self.plugin.link(src, dst_path)
        return self.plugin.url(dst_path)
