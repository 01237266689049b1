"""A tour of the simulated grid: write, read through caches, replicate.

Run with ``python demos/quickstart.py``. Everything happens in virtual time
on an in-process network, so it finishes in about a second.
"""

import tempfile

from gridfs.access import AccessStrategy
from gridfs.deploy import SimGrid, token_for

with tempfile.TemporaryDirectory() as work:
    grid = SimGrid(work)  # catalogue, se1, se2, three aiod servers, broker

    def session():
        alice = grid.client("alice")
        data = bytes(range(256)) * 4000  # about 1 MB

        alice.write_file("/alice/run1.dat", data)
        guid, size, pfns = alice.catalogue.resolve("/alice/run1.dat")
        print("stored %d bytes as %s at %s" % (size, guid, pfns[0]))

        # the same bytes through one cache, then through a chain of three
        for route in ("aiod1:7100", "aiod1:7100@aiod2:7100@aiod3:7100"):
            t0 = grid.clock.now()
            assert alice.read_file("/alice/run1.dat", route=route) == data
            print("read via %-40s %7.2f ms" % (route, grid.clock.now() - t0))
        print("aiod1 fetched %d pages from its next hop" % grid.aiods["aiod1:7100"].stats["next_hop_fetches"])

        # whole-file staging keeps a local copy keyed by GUID
        alice.read_file("/alice/run1.dat", AccessStrategy.WHOLE_FILE_LOCAL)

        # ask the broker for a second replica on se2
        rid = grid.broker.enqueue(token_for("alice"), "/alice/run1.dat", "se2")
        grid.broker.run_until_settled()
        print("transfer %d: %s" % (rid, grid.broker.query(rid).state))
        for p in alice.catalogue.resolve("/alice/run1.dat")[2]:
            print("  replica", p)

    grid.run(session)
