"""An io gatekeeper sending clients to its least loaded slave.

Two slaves report their load every 2 s. Slave A is kept busy with ten open
sessions, B with two, so new opens land on B until the loads swap.
"""

import tempfile

from gridfs.aiod.client import AiodSession
from gridfs.aiod.route import AccessTicket
from gridfs.deploy import DEFAULT_SCENARIO, SimGrid

A, B, GK = "sa:7100", "sb:7100", "gk:7100"
desc = dict(DEFAULT_SCENARIO, aiods=[{"addr": GK, "roles": ["io_gatekeeper"], "slaves": [A, B]},
                                     {"addr": A}, {"addr": B}])

with tempfile.TemporaryDirectory() as work:
    grid = SimGrid(work, desc)

    def hold(c, addr, n):
        guid, _, pfns = c.catalogue.resolve("/alice/g")
        ticket = AccessTicket(addr, "alice", c.credential_ref(), "/alice/g", str(pfns[0]), guid)
        return [AiodSession.open(c.transport, c.token, addr, ticket) for _ in range(n)]

    def where(c):
        hid = c.generic_open("/alice/g", route=GK)
        addr = c.files.get(hid).session.addr
        c.generic_close(hid)
        return addr

    def main():
        c = grid.client("alice")
        c.write_file("/alice/g", b"payload" * 1000)
        busy_a, busy_b = hold(c, A, 10), hold(c, B, 2)
        for s in (A, B):
            grid.aiods[s].start_monitor(GK, interval_ms=2000.0)
        grid.clock.sleep(100)
        print("A holds 10 sessions, B holds 2: open goes to", where(c))
        for s in busy_a[2:]:
            s.close()
        busy_b += hold(c, B, 8)
        grid.clock.sleep(2500)  # one more report round
        print("after swapping the loads:      open goes to", where(c))

    grid.clock.spawn(main, name="main").join()
