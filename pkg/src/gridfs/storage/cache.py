"""Byte-budgeted local disk cache of whole files, least recently used out first."""

import os
import re
import threading
from collections import OrderedDict

from ..errors import ProducerFailure

_SAFE = re.compile(r"[^A-Za-z0-9._-]")


class LocalDiskCache:
    def __init__(self, directory, budget_bytes=1 << 30):
        self.dir = directory
        self.budget = int(budget_bytes)
        os.makedirs(directory, exist_ok=True)
        self._lru = OrderedDict()  # key -> size
        self._lock = threading.Lock()
        self.pulls = 0

    def path_for(self, key):
        return os.path.join(self.dir, _SAFE.sub("%", key))

    def __contains__(self, key):
        return key in self._lru

    @property
    def total(self):
        return sum(self._lru.values())

    def get_or_pull(self, key, producer):
        """Local path of the cached file, calling ``producer(dest_path)`` on a miss.

        A failed producer leaves nothing behind, so the next call retries.
        """
        with self._lock:
            if key in self._lru:
                self._lru.move_to_end(key)
                return self.path_for(key)
            dest = self.path_for(key)
            tmp = dest + ".pull"
            self.pulls += 1
            try:
                producer(tmp)
                os.replace(tmp, dest)
            except Exception as exc:
                if os.path.exists(tmp):
                    os.remove(tmp)
                raise ProducerFailure("pull of %s failed: %s" % (key, exc)) from exc
            self._lru[key] = os.path.getsize(dest)
            self._evict(keep=key)
            return dest

    def invalidate(self, key):
        with self._lock:
            if self._lru.pop(key, None) is not None:
                os.remove(self.path_for(key))

    def _evict(self, keep):
        while sum(self._lru.values()) > self.budget:
            victim = next((k for k in self._lru if k != keep), None)
            if victim is None:
                break
            del self._lru[victim]
            os.remove(self.path_for(victim))
