"""Build a complete grid inside one process on top of the network simulator.

A scenario description names the users, storage elements, aiod servers and
clients plus the links between them::

    {"seed": 7,
     "users": {"alice": ["alice", "phys"]},
     "ses": [{"name": "se1", "addr": "se1:7001", "site": "cern",
              "volumes": [{"id": "v1", "capacity_bytes": 1 << 30}]}],
     "aiods": [{"addr": "aiod1:7100"}],
     "clients": [{"addr": "client1:1", "site": "cern"}],
     "mesh": {"latency_ms": 0.1, "bandwidth": 1e9}}

Every user gets a home directory ``/<user>`` and a credential file
``/<user>/.cred`` holding their token.
"""

import copy
import os

from .access import ClientConfig, GridClient
from .aiod.gatekeeper import GateKeeperConfig
from .aiod.server import AiodServer
from .catalogue.service import CatalogueService
from .catalogue.tree import Catalogue
from .clock import VirtualClock
from .simnet import SimNet, Topology
from .storage.element import SeConfig, StorageElement
from .storage.service import SeService
from .transfer import BrokerService, TransferBroker
from .transport import Registry, SimTransport

CATALOGUE_ADDR = "catalogue:7000"
BROKER_ADDR = "broker:7200"
ADMIN = "admin"

DEFAULT_SCENARIO = {
    "seed": 7,
    "users": {"alice": ["alice", "phys"], "bob": ["bob", "phys"], "carol": ["carol"]},
    "ses": [
        {"name": "se1", "addr": "se1:7001", "site": "cern",
         "volumes": [{"id": "v1", "capacity_bytes": 1 << 30},
                     {"id": "v2", "capacity_bytes": 1 << 30}]},
        {"name": "se2", "addr": "se2:7001", "site": "gsi",
         "volumes": [{"id": "v1", "capacity_bytes": 1 << 30}]},
    ],
    "aiods": [{"addr": "aiod1:7100"}, {"addr": "aiod2:7100"}, {"addr": "aiod3:7100"}],
    "clients": [{"addr": "client1:1", "site": "cern"}, {"addr": "client2:1", "site": "gsi"}],
    "mesh": {"latency_ms": 0.1, "bandwidth": 1e9},
}


def token_for(user):
    return "tok-%s" % user


class SimGrid:
    """All services of one scenario, wired together over a :class:`SimNet`."""

    def __init__(self, workdir, scenario=None):
        self.scenario = desc = copy.deepcopy(scenario or DEFAULT_SCENARIO)
        self.workdir = workdir
        self.seed = desc.get("seed", 0)
        self.clock = VirtualClock()
        self.registry = Registry()
        self.catalogue_addr = desc.get("catalogue_addr", CATALOGUE_ADDR)
        self.broker_addr = desc.get("broker_addr", BROKER_ADDR)

        nodes = [{"addr": self.catalogue_addr, "role": "catalogue"},
                 {"addr": self.broker_addr, "role": "broker"}]
        nodes += [{"addr": s["addr"], "role": "se"} for s in desc.get("ses", [])]
        nodes += [{"addr": a["addr"], "role": "aiod"} for a in desc.get("aiods", [])]
        nodes += [{"addr": c["addr"], "role": "client"} for c in desc.get("clients", [])]
        self.topology = Topology.from_dict({"seed": self.seed, "nodes": nodes,
                                            "links": desc.get("links", []),
                                            "mesh": desc.get("mesh")})
        self.net = SimNet(self.clock, self.topology)

        users = {token_for(ADMIN): {"user": ADMIN, "groups": [ADMIN]}}
        for user, groups in desc.get("users", {}).items():
            users[token_for(user)] = {"user": user, "groups": list(groups) or [user]}
        self.users = users
        ses = {s["name"]: {"addr": s["addr"], "site": s.get("site", "")}
               for s in desc.get("ses", [])}
        self.catalogue = Catalogue(superuser=ADMIN, seed=self.seed,
                                   db_host=self.catalogue_addr.split(":")[0],
                                   journal_path=desc.get("journal_path"))
        self.catalogue_service = CatalogueService(self.catalogue, users, ses)
        self.registry[self.catalogue_addr] = self.catalogue_service

        self.ses = {}
        for s in desc.get("ses", []):
            cfg = SeConfig.from_dict({
                "se_name": s["name"], "plugin": s.get("plugin", "mem"), "listen": s["addr"],
                "cache_dir": os.path.join(workdir, "se", s["name"]), "site": s.get("site", ""),
                "volumes": [dict(v, mount_point=v.get("mount_point", "/%s" % v["id"]))
                            for v in s["volumes"]],
                "cache_budget_bytes": s.get("cache_budget_bytes", 1 << 30),
            })
            se = StorageElement(cfg, now=lambda: self.clock.now() / 1000.0)
            self.ses[s["name"]] = se
            self.registry[s["addr"]] = SeService(se, sorted(users))

        self.aiods = {}
        for a in desc.get("aiods", []):
            gk = GateKeeperConfig(a.get("roles", ()), a.get("slaves", ()),
                                  a.get("cache_budget", 1 << 30), a.get("rate_limit", 0.0))
            srv = AiodServer(a["addr"], self.transport(a["addr"]), self.clock, self.catalogue_addr,
                             os.path.join(workdir, "aiod", a["addr"].replace(":", "_")), gk,
                             auth=token_for(ADMIN))
            srv.tokens = set(users)
            self.aiods[a["addr"]] = srv
            self.registry[a["addr"]] = srv

        broker_cfg = desc.get("broker", {})
        self.broker = TransferBroker(self.transport(self.broker_addr), self.catalogue_addr,
                                     token_for(ADMIN), self.clock,
                                     broker_cfg.get("max_concurrent", 2),
                                     broker_cfg.get("retry_limit", 3))
        self.registry[self.broker_addr] = BrokerService(self.broker)

        self.clients = {c["addr"]: c for c in desc.get("clients", [])}
        self._bootstrap()

    def _bootstrap(self):
        """Home directories and credential files, written straight into the catalogue."""
        self.catalogue_service.bootstrap_homes()

    # -- handles for tests and scenarios -------------------------------------

    def transport(self, addr):
        return SimTransport(self.net, self.registry, addr)

    def client(self, user, addr=None, route=None, default_se=None, cache_dir=None):
        addr = addr or sorted(self.clients)[0]
        site = self.clients.get(addr, {}).get("site", "")
        default_se = default_se or sorted(self.ses)[0]
        cache_dir = cache_dir or os.path.join(self.workdir, "client", addr.replace(":", "_"), user)
        cfg = ClientConfig(self.catalogue_addr, default_se, site, cache_dir, route)
        return GridClient(self.transport(addr), cfg, token_for(user), self.clock)

    def run(self, fn, *args):
        """Run ``fn`` as a simulated task, drive the clock until idle, return its result."""
        task = self.clock.spawn(fn, *args, name="main-%s" % getattr(fn, "__name__", "fn"))
        task.join()
        self.clock.run_until_idle()
        return task._task.result

    def run_all(self, fns):
        """Run several callables concurrently in virtual time; results in order."""
        tasks = [self.clock.spawn(fn, name="par-%d" % i) for i, fn in enumerate(fns)]
        out = []
        for t in tasks:
            out.append(t.join())
        self.clock.run_until_idle()
        return out

    def trace_hash(self):
        return self.net.trace_hash()
