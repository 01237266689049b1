"""Scripted scenarios over a simulated grid.

A script is a list of steps; each step is a dict with an ``op`` key:

``put``        user, lfn (``@SE`` allowed), size, optional route / strategy
``get``        user, lfn, optional route / strategy; checks bytes against ``put``
``replicate``  user, lfn, se (queues a transfer)
``broker``     run the transfer broker until its queue is empty, or ``steps`` times
``partition`` / ``heal``   node
``sleep``      ms
``mkdir`` / ``rm``          user, lfn

File content is drawn from a seeded generator so the same seed always
produces the same bytes and therefore the same network trace.
"""

import random

from .access import AccessStrategy
from .deploy import DEFAULT_SCENARIO, SimGrid, token_for
from .errors import GridError

DEFAULT_SCRIPT = [
    {"op": "mkdir", "user": "alice", "lfn": "/alice/run1"},
    {"op": "put", "user": "alice", "lfn": "/alice/run1/a.dat", "size": 150_000},
    {"op": "put", "user": "alice", "lfn": "/alice/run1/b.dat@se2", "size": 70_000,
     "route": "aiod1:7100@aiod2:7100"},
    {"op": "put", "user": "bob", "lfn": "/bob/c.dat", "size": 5_000, "strategy": "local"},
    {"op": "get", "user": "alice", "lfn": "/alice/run1/a.dat", "route": "aiod1:7100"},
    {"op": "get", "user": "alice", "lfn": "/alice/run1/a.dat", "route": "aiod1:7100"},
    {"op": "get", "user": "alice", "lfn": "/alice/run1/b.dat",
     "route": "aiod3:7100@aiod2:7100@aiod1:7100"},
    {"op": "replicate", "user": "alice", "lfn": "/alice/run1/a.dat", "se": "se2"},
    {"op": "partition", "node": "se2:7001"},
    {"op": "broker", "steps": 1},
    {"op": "heal", "node": "se2:7001"},
    {"op": "broker"},
    {"op": "get", "user": "bob", "lfn": "/bob/c.dat", "strategy": "local"},
    {"op": "rm", "user": "bob", "lfn": "/bob/c.dat"},
    {"op": "sleep", "ms": 50},
]


def run_scenario(workdir, seed=7, scenario=None, script=None):
    """Run a script; returns a summary with the trace hash and per-step results."""
    desc = dict(scenario or DEFAULT_SCENARIO, seed=seed)
    grid = SimGrid(workdir, desc)
    rng = random.Random(seed)
    written = {}
    results = []

    def body():
        for step in script or DEFAULT_SCRIPT:
            try:
                results.append({"op": step["op"], "ok": True,
                                "value": _step(grid, rng, written, step)})
            except GridError as exc:
                results.append({"op": step["op"], "ok": False, "error": exc.code})

    grid.run(body)
    return {"seed": seed, "trace_hash": grid.trace_hash(), "virtual_ms": round(grid.clock.now(), 6),
            "events": len(grid.net.trace), "steps": results, "grid": grid}


def _step(grid, rng, written, step):
    op = step["op"]
    if op == "put":
        data = rng.randbytes(int(step["size"]))
        client = grid.client(step["user"], route=step.get("route"))
        client.write_file(step["lfn"], data, AccessStrategy(step.get("strategy", "remote")))
        written[step["lfn"].rsplit("@", 1)[0]] = data
        return len(data)
    if op == "get":
        client = grid.client(step["user"], route=step.get("route"))
        data = client.read_file(step["lfn"], AccessStrategy(step.get("strategy", "remote")))
        expected = written.get(step["lfn"])
        return {"size": len(data), "match": expected is None or expected == data}
    if op == "replicate":
        return grid.broker.enqueue(token_for(step["user"]), step["lfn"], step["se"])
    if op == "broker":
        if "steps" in step:
            for _ in range(int(step["steps"])):
                grid.broker.broker_step()
        else:
            grid.broker.run_until_settled()
        return {str(r.id): r.state for r in grid.broker.requests.values()}
    if op == "partition":
        grid.net.partition(step["node"])
        return None
    if op == "heal":
        grid.net.heal(step["node"])
        return None
    if op == "sleep":
        grid.clock.sleep(float(step["ms"]))
        return None
    if op == "mkdir":
        grid.client(step["user"]).catalogue.mkdir(step["lfn"])
        return None
    if op == "rm":
        client = grid.client(step["user"])
        for pfn in client.catalogue.remove(step["lfn"]):
            try:
                client.se_client(pfn.addr).rm(pfn)
            except GridError:
                pass
        return None
    raise ValueError("unknown scenario step %r" % op)
