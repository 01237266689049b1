"""GUID-keyed page cache on disk.

Each page is one file named ``<guid>.<offset>.<length>.page``; ``index.log``
records insertions and evictions so a restarted server finds its pages again.
All pages of one GUID in one store share a page size, so they never overlap.
"""

import os
import threading
from collections import OrderedDict
from dataclasses import dataclass


@dataclass
class CachePage:
    guid: str
    offset: int
    length: int
    last_access: float
    data: bytes = None  # filled only when handed out


class PageStore:
    def __init__(self, directory, budget, clock=None):
        self.dir = directory
        self.budget = int(budget)
        self.clock = clock
        os.makedirs(directory, exist_ok=True)
        self._pages = OrderedDict()  # (guid, offset) -> CachePage, LRU first
        self._page_size = {}  # guid -> page size
        self._count = {}  # guid -> number of pages held
        self._total = 0
        self._lock = threading.Lock()
        self._index_path = os.path.join(directory, "index.log")
        self._load_index()
        self._index = open(self._index_path, "a")

    def _now(self):
        return self.clock.now() if self.clock is not None else 0.0

    def _file(self, guid, offset, length):
        return os.path.join(self.dir, "%s.%d.%d.page" % (guid, offset, length))

    def _load_index(self):
        if not os.path.exists(self._index_path):
            return
        with open(self._index_path) as fh:
            for line in fh:
                parts = line.split()
                if len(parts) != 5:
                    continue
                op, guid, off, length, psize = parts[0], parts[1], int(parts[2]), int(parts[3]), int(parts[4])
                if op == "put" and os.path.exists(self._file(guid, off, length)):
                    self._pages[(guid, off)] = CachePage(guid, off, length, 0.0)
                    self._page_size[guid] = psize
                elif op == "del":
                    self._pages.pop((guid, off), None)
        self._total = sum(p.length for p in self._pages.values())
        for guid, _ in self._pages:
            self._count[guid] = self._count.get(guid, 0) + 1
        for guid in list(self._page_size):
            if guid not in self._count:
                del self._page_size[guid]

    @property
    def total_bytes(self):
        return self._total

    def page_size(self, guid, default):
        """The page size already used for ``guid`` here, or ``default``."""
        return self._page_size.get(guid, default)

    def has_guid(self, guid):
        return guid in self._count

    def get(self, guid, offset):
        with self._lock:
            page = self._pages.get((guid, offset))
            if page is None:
                return None
            self._pages.move_to_end((guid, offset))
            page.last_access = self._now()
            path = self._file(guid, offset, page.length)
        with open(path, "rb") as fh:
            return fh.read()

    def put(self, guid, offset, data, page_size):
        """Insert a page; returns False if it was not stored (exists, or larger than budget)."""
        length = len(data)
        with self._lock:
            if self._page_size.get(guid, page_size) != page_size or offset % page_size:
                return False
            if (guid, offset) in self._pages or length > self.budget:
                return False
            while self._total + length > self.budget and self._pages:
                self._evict_one()
            with open(self._file(guid, offset, length), "wb") as fh:
                fh.write(data)
            self._page_size[guid] = page_size
            self._pages[(guid, offset)] = CachePage(guid, offset, length, self._now())
            self._total += length
            self._count[guid] = self._count.get(guid, 0) + 1
            self._log("put", guid, offset, length)
            return True

    def _evict_one(self):
        (guid, offset), page = self._pages.popitem(last=False)
        self._total -= page.length
        try:
            os.remove(self._file(guid, offset, page.length))
        except FileNotFoundError:
            pass
        self._log("del", guid, offset, page.length)
        self._count[guid] -= 1
        if not self._count[guid]:
            del self._count[guid]
            self._page_size.pop(guid, None)

    def _log(self, op, guid, offset, length):
        self._index.write("%s %s %d %d %d\n" % (op, guid, offset, length,
                                                self._page_size.get(guid, 0)))
        self._index.flush()

    def pages(self, guid=None):
        """Snapshot of page descriptors, optionally for one GUID."""
        with self._lock:
            return [p for (g, _), p in self._pages.items() if guid is None or g == guid]

    def read_page(self, page):
        with open(self._file(page.guid, page.offset, page.length), "rb") as fh:
            return fh.read()

    def close(self):
        self._index.close()
