"""Write-ahead journal plus periodic snapshots, one JSON record per line."""

import json
import os


class Journal:
    """Append-only operation log.

    Each line is a request body (``op``, ``args``, ``auth``) with a
    monotonically increasing ``seq``. A snapshot file next to the journal
    holds the full state as of some ``seq``; records at or below it are
    dropped from the journal when the snapshot is taken.
    """

    def __init__(self, path, snapshot_every=1000):
        self.path = path
        self.snapshot_path = path + ".snap"
        self.snapshot_every = snapshot_every
        self.seq = 0
        self.since_snapshot = 0
        self._fh = None

    def load(self):
        """Return (snapshot lines or None, journal records after the snapshot)."""
        snap = None
        base = 0
        if os.path.exists(self.snapshot_path):
            with open(self.snapshot_path) as fh:
                snap = [json.loads(line) for line in fh if line.strip()]
            base = snap[0].get("seq", 0) if snap else 0
        records = []
        if os.path.exists(self.path):
            with open(self.path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                    except ValueError:
                        break  # torn tail write
                    if rec["seq"] > base:
                        records.append(rec)
        self.seq = max([base] + [r["seq"] for r in records])
        self.since_snapshot = len(records)
        return snap, records

    def append(self, op, args, auth=None):
        self.seq += 1
        rec = {"seq": self.seq, "op": op, "args": args, "auth": auth}
        if self._fh is None:
            d = os.path.dirname(self.path)
            if d:
                os.makedirs(d, exist_ok=True)
            self._fh = open(self.path, "a")
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._fh.flush()
        self.since_snapshot += 1
        return rec

    def snapshot_due(self):
        return self.snapshot_every and self.since_snapshot >= self.snapshot_every

    def write_snapshot(self, lines):
        tmp = self.snapshot_path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(json.dumps({"kind": "header", "seq": self.seq}) + "\n")
            for line in lines:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.snapshot_path)
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        open(self.path, "w").close()
        self.since_snapshot = 0

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
