"""Deterministic in-process network.

Nodes are addressed by ``host:port`` text. Links are symmetric, carry a
latency (ms) and a bandwidth (bytes/s) and serialize frames per direction, so
frames on one link arrive in the order they were sent. Frames between nodes
without a direct link take the lowest-latency path of up links and are
stored and forwarded at every hop.

Every frame produces a ``send`` record and later exactly one ``deliver`` or
``drop`` record in :attr:`SimNet.trace`.
"""

import hashlib
import heapq
import json
from dataclasses import dataclass, field

from .errors import LinkDown, NoRoute, UnknownNode


@dataclass
class SimLink:
    a: str
    b: str
    latency: float  # ms
    bandwidth: float  # bytes per second
    up: bool = True
    busy_until: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.latency < 0:
            raise ValueError("latency must be >= 0")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")

    def other(self, node):
        return self.b if node == self.a else self.a

    def transmit_ms(self, nbytes):
        return nbytes * 1000.0 / self.bandwidth


@dataclass
class Topology:
    nodes: dict = field(default_factory=dict)  # addr -> role label
    links: list = field(default_factory=list)
    seed: int = 0

    @classmethod
    def from_dict(cls, desc):
        topo = cls(seed=desc.get("seed", 0))
        for node in desc.get("nodes", []):
            topo.nodes[node["addr"]] = node.get("role", "node")
        linked = set()
        for ln in desc.get("links", []):
            topo.links.append(SimLink(ln["a"], ln["b"], float(ln.get("latency_ms", 1.0)),
                                      float(ln.get("bandwidth", 1e9))))
            linked.add(frozenset((ln["a"], ln["b"])))
        mesh = desc.get("mesh")
        if mesh:
            addrs = sorted(topo.nodes)
            for i, a in enumerate(addrs):
                for b in addrs[i + 1:]:
                    if frozenset((a, b)) not in linked:
                        topo.links.append(SimLink(a, b, float(mesh.get("latency_ms", 1.0)),
                                                  float(mesh.get("bandwidth", 1e9))))
        return topo


class SimNet:
    def __init__(self, clock, topology=None):
        self.clock = clock
        self.nodes = {}
        self._links = {}
        self._adj = {}
        self.trace = []
        self._seq = 0
        self.partitioned = set()
        if topology is not None:
            for addr, role in topology.nodes.items():
                self.add_node(addr, role)
            for ln in topology.links:
                self.add_link(ln.a, ln.b, ln.latency, ln.bandwidth)

    def add_node(self, addr, role="node"):
        self.nodes[addr] = role
        self._adj.setdefault(addr, [])

    def add_link(self, a, b, latency_ms, bandwidth):
        for n in (a, b):
            if n not in self.nodes:
                raise UnknownNode(n)
        link = SimLink(a, b, float(latency_ms), float(bandwidth))
        self._links[frozenset((a, b))] = link
        self._adj[a].append(link)
        self._adj[b].append(link)
        return link

    def link(self, a, b):
        return self._links.get(frozenset((a, b)))

    def partition(self, node):
        self._require(node)
        self.partitioned.add(node)
        for ln in self._adj[node]:
            ln.up = False
        self._record("partition", node, node, 0)

    def heal(self, node):
        self._require(node)
        self.partitioned.discard(node)
        for ln in self._adj[node]:
            if ln.a not in self.partitioned and ln.b not in self.partitioned:
                ln.up = True
        self._record("heal", node, node, 0)

    def set_link(self, a, b, up):
        self._links[frozenset((a, b))].up = up

    def _require(self, node):
        if node not in self.nodes:
            raise UnknownNode("unknown node %s" % node)

    # -- routing ----------------------------------------------------------

    def path(self, src, dst):
        """Lowest-latency list of links from src to dst over up links."""
        self._require(src)
        self._require(dst)
        for n in (src, dst):
            if n in self.partitioned:
                raise LinkDown("%s is partitioned" % n)
        direct = self.link(src, dst)
        if direct is not None:
            if not direct.up:
                raise LinkDown("link %s-%s is down" % (src, dst))
            return [direct]
        dist = {src: 0.0}
        prev = {}
        heap = [(0.0, src)]
        while heap:
            d, node = heapq.heappop(heap)
            if node == dst:
                break
            if d > dist[node]:
                continue
            for ln in sorted(self._adj[node], key=lambda l: l.other(node)):
                if not ln.up:
                    continue
                nxt = ln.other(node)
                nd = d + ln.latency
                if nd < dist.get(nxt, float("inf")):
                    dist[nxt] = nd
                    prev[nxt] = (node, ln)
                    heapq.heappush(heap, (nd, nxt))
        if dst not in prev:
            if self._adj[src] and not any(ln.up for ln in self._adj[src]):
                raise LinkDown("%s has no up links" % src)
            raise NoRoute("no route %s -> %s" % (src, dst))
        hops = []
        node = dst
        while node != src:
            node, ln = prev[node]
            hops.append(ln)
        hops.reverse()
        return hops

    # -- delivery ---------------------------------------------------------

    def deliver(self, src, dst, nbytes, op=None, now=None):
        """Schedule a frame; returns (arrival time, frame id).

        The caller is expected to wait until the arrival time and then call
        :meth:`arrive`, which decides between delivery and drop.
        """
        now = self.clock.now() if now is None else now
        try:
            hops = self.path(src, dst)
        except (LinkDown, NoRoute) as exc:
            fid = self._record("send", src, dst, nbytes, op, t=now)
            self._record("drop", src, dst, nbytes, op, t=now, frame=fid, reason=exc.code)
            raise
        t = now
        node = src
        for ln in hops:
            start = max(t, ln.busy_until.get(node, 0.0))
            done = start + ln.transmit_ms(nbytes)
            ln.busy_until[node] = done
            t = done + ln.latency
            node = ln.other(node)
        fid = self._record("send", src, dst, nbytes, op, t=now)
        return t, fid, hops

    def arrive(self, fid, src, dst, nbytes, hops, op=None):
        """Deliver or drop a frame at its arrival time. Returns True if delivered."""
        if dst in self.partitioned or src in self.partitioned or not all(ln.up for ln in hops):
            self._record("drop", src, dst, nbytes, op, frame=fid, reason="LinkDown")
            return False
        self._record("deliver", src, dst, nbytes, op, frame=fid)
        return True

    def _record(self, kind, src, dst, nbytes, op=None, t=None, **extra):
        self._seq += 1
        ev = {"seq": self._seq, "t": round(self.clock.now() if t is None else t, 6),
              "kind": kind, "src": src, "dst": dst, "bytes": nbytes}
        if op is not None:
            ev["op"] = op
        ev.update(extra)
        self.trace.append(ev)
        return self._seq

    def trace_hash(self):
        h = hashlib.sha256()
        for ev in self.trace:
            h.update(json.dumps(ev, sort_keys=True).encode())
            h.update(b"\n")
        return h.hexdigest()

    def unresolved_frames(self):
        """Frame ids that were sent but neither delivered nor dropped."""
        sent = {ev["seq"] for ev in self.trace if ev["kind"] == "send"}
        closed = {ev["frame"] for ev in self.trace if ev["kind"] in ("deliver", "drop")}
        return sent - closed
