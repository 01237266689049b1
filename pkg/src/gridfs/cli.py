"""Command line front ends: ``gridfs`` (commands, shell, servers) and ``gridfs-sim``.

Configuration is a JSON file named by ``--config`` or ``GRIDFS_CONFIG``
with one section per component (``client``, ``catalogue``, ``se``,
``aiod``, ``broker``). ``GRIDFS_TOKEN`` overrides the client token.
"""

import argparse
import json
import logging
import os
import shlex
import sys
import tempfile
import threading
import time
from dataclasses import dataclass

from .access import AccessStrategy, ClientConfig, GridClient, split_se
from .errors import GridError, InvalidPath, NotADirectory
from .names import LfnPath
from .perms import PermissionBits
from .transfer import MOVE, REPLICATE, BrokerClient

log = logging.getLogger(__name__)

#: process exit status per error name; 0 is success, 2 is a usage error
EXIT_CODES = {
    "GridError": 1,
    "InternalError": 3,
    "NotFound": 10,
    "PermissionDenied": 11,
    "AlreadyExists": 12,
    "IsDirectory": 13,
    "NotADirectory": 14,
    "DirectoryNotEmpty": 15,
    "InvalidPath": 16,
    "DuplicateGuid": 17,
    "DuplicateReplica": 18,
    "SizeMismatch": 19,
    "NoSpace": 20,
    "NotAllocated": 21,
    "QuotaExceeded": 22,
    "BackendFailure": 23,
    "RangeError": 24,
    "ProducerFailure": 25,
    "SizeValidationFailed": 26,
    "RegistrationFailed": 27,
    "NonSequentialWrite": 28,
    "BadHandle": 29,
    "TransportError": 30,
    "Unreachable": 31,
    "LinkDown": 32,
    "NoRoute": 33,
    "UnknownNode": 34,
    "AuthFailed": 35,
    "TicketInvalid": 36,
    "AlreadyReplicated": 40,
    "UnknownSe": 41,
    "NoFreshReports": 42,
    "BadRequest": 43,
    "Redirect": 44,
}
USAGE = 2


def exit_code(exc):
    return EXIT_CODES.get(getattr(exc, "code", None), 1)


# -- targets ---------------------------------------------------------------


def _local_path(text):
    return text[len("local:"):] if text.startswith("local:") else text


@dataclass(frozen=True)
class Target:
    """Either a local path or an LFN with an optional ``@SE`` suffix."""

    local: str = None
    lfn: str = None
    se: str = None

    @property
    def is_local(self):
        return self.local is not None


def parse_target(text, cwd="/"):
    """``local:x`` and relative paths are local; ``/...`` and ``grid://...`` are LFNs."""
    if text.startswith("local:"):
        return Target(local=text[len("local:"):])
    if text.startswith("/") or text.startswith("grid://"):
        lfn, se = split_se(text)
        return Target(lfn=str(LfnPath.parse(lfn, cwd)), se=se)
    return Target(local=text)


def _ls_line(info):
    kind = {"dir": "d", "meta": "m"}.get(info["type"], "-")
    return "%s%s %-8s %-8s %10d %s" % (kind, PermissionBits.parse(info["mode"]).symbolic(),
                                       info["owner"], info["group"], info["size"], info["name"])


# -- the command layer -------------------------------------------------------


class GridShell:
    """Grid commands over a :class:`GridClient`; also the interactive shell.

    Every command returns its output (text, or bytes for ``cat``) and raises
    :class:`GridError` on failure. :meth:`execute` turns that into printed
    output plus an exit status.
    """

    def __init__(self, client, broker=None, out=None, err=None, dir_cache_ttl_s=5.0):
        self.client = client
        self.broker = broker
        self.out = out or sys.stdout
        self.err = err or sys.stderr
        self.cwd = LfnPath.parse("/")
        self.ttl_ms = float(dir_cache_ttl_s) * 1000.0
        self._dcache = {}
        self.cache_hits = 0

    # helpers
    def _path(self, text):
        return str(LfnPath.parse(text, self.cwd))

    def _now(self):
        return self.client.clock.now()

    def _cached(self, kind, path, fetch):
        key = (kind, path)
        hit = self._dcache.get(key)
        now = self._now()
        if hit is not None and now - hit[0] < self.ttl_ms:
            self.cache_hits += 1
            return hit[1]
        value = fetch()
        self._dcache[key] = (now, value)
        return value

    def invalidate(self):
        self._dcache.clear()

    # commands
    def cmd_pwd(self):
        return str(self.cwd)

    def cmd_cd(self, path="/"):
        path = self._path(path)
        info = self._cached("stat", path, lambda: self.client.catalogue.stat(path))
        if info["type"] != "dir":
            raise NotADirectory("%s is not a directory" % path)
        self.cwd = LfnPath.parse(path)
        return None

    def cmd_ls(self, path=None, long=False):
        path = self._path(path or ".")
        info = self._cached("stat", path, lambda: self.client.catalogue.stat(path))
        entries = [info] if info["type"] != "dir" else \
            self._cached("ls", path, lambda: self.client.catalogue.list_dir(path))
        if long:
            return "\n".join(_ls_line(e) for e in entries)
        return "\n".join(e["name"] for e in entries)

    def cmd_mkdir(self, path, parents=False):
        path = LfnPath.parse(path, self.cwd)
        todo = [a for a in path.ancestors() if not a.is_root] + [path] if parents else [path]
        for p in todo:
            if parents and _is_dir(self.client, str(p)):
                continue
            self.client.catalogue.mkdir(p)
        self.invalidate()

    def cmd_rm(self, path):
        path = self._path(path)
        info = self.client.catalogue.stat(path)
        self.invalidate()
        if info["type"] == "dir":
            self.client.catalogue.rmdir(path)
            return None
        for pfn in self.client.catalogue.remove(path):
            if pfn.protocol == "db":
                continue
            try:
                self.client.se_client(pfn.addr).rm(pfn)
            except GridError as exc:
                self.err.write("warning: %s not removed: %s\n" % (pfn, exc))
        return None

    def cmd_mv(self, src, dst):
        self.client.catalogue.move(self._path(src), self._path(dst))
        self.invalidate()

    def cmd_whereis(self, path):
        _, _, pfns = self.client.catalogue.resolve(self._path(path))
        lines = []
        for pfn in pfns:
            name, _ = self.client.se_of(pfn)
            lines.append("%s %s" % (name or "-", pfn))
        return "\n".join(lines)

    def cmd_cat(self, path):
        path = self._path(path)
        if path.endswith(".meta"):
            return self.client.catalogue.read_metadata(path) + "\n"
        return self.client.read_file(path)

    def cmd_meta(self, path, tags=()):
        path = self._path(path)
        if tags:
            parsed = {}
            for t in tags:
                k, sep, v = t.partition("=")
                if not sep or not k:
                    raise InvalidPath("metadata tags look like key=value, got %r" % t)
                parsed[k] = v
            self.client.catalogue.set_metadata(path, parsed)
            self.invalidate()
            return None
        return self.client.catalogue.read_metadata(path)

    def cmd_cp(self, src, dst, route=None, strategy=AccessStrategy.REMOTE_PARTIAL, move=False):
        s, d = parse_target(src, self.cwd), parse_target(dst, self.cwd)
        if s.is_local and d.is_local:
            raise InvalidPath("at least one side of cp must be a grid file")
        self.invalidate()
        if s.is_local:
            target = d.lfn + ("@" + d.se if d.se else "")
            if _is_dir(self.client, d.lfn):
                target = "%s/%s@%s" % (d.lfn.rstrip("/"), os.path.basename(s.local), d.se) \
                    if d.se else "%s/%s" % (d.lfn.rstrip("/"), os.path.basename(s.local))
            with open(s.local, "rb") as fh:
                data = fh.read()
            self.client.write_file(target, data, strategy, route)
            return None
        if d.is_local:
            data = self.client.read_file(s.lfn, strategy, route)
            dest = d.local
            if os.path.isdir(dest):
                dest = os.path.join(dest, LfnPath.parse(s.lfn).name)
            with open(dest, "wb") as fh:
                fh.write(data)
            return None
        if s.lfn == d.lfn:
            if not d.se:
                raise InvalidPath("copying %s onto itself needs a destination @SE" % s.lfn)
            if self.broker is None:
                raise InvalidPath("no transfer broker configured")
            rid = self.broker.enqueue(s.lfn, d.se, MOVE if move else REPLICATE, s.se or "any")
            return "transfer %d queued" % rid
        data = self.client.read_file(s.lfn, strategy, route)
        self.client.write_file(d.lfn + ("@" + d.se if d.se else ""), data, strategy, route)
        return None

    def cmd_aioget(self, lfn, local, route=None):
        n = self.client.aioget(self._path(lfn), _local_path(local), route)
        return "%d bytes" % n

    def cmd_aioput(self, local, lfn, route=None):
        text, se = split_se(lfn)
        n = self.client.aioput(_local_path(local), self._path(text) + ("@" + se if se else ""), route)
        self.invalidate()
        return "%d bytes" % n

    def cmd_transfer(self, action, arg, se=None, move=False):
        if self.broker is None:
            raise InvalidPath("no transfer broker configured")
        if action == "enqueue":
            rid = self.broker.enqueue(self._path(arg), se, MOVE if move else REPLICATE)
            return "transfer %d queued" % rid
        req = self.broker.query(int(arg))
        text = "transfer %d %s %s -> %s: %s (attempts %d)" % (
            req.id, req.kind, req.lfn, req.dst_se, req.state, req.attempts)
        if req.last_error:
            text += " last error: %s" % req.last_error
        return text

    # dispatch
    def run_args(self, ns):
        cmd = ns.command
        if cmd == "ls":
            return self.cmd_ls(ns.path, ns.long)
        if cmd == "mkdir":
            return self.cmd_mkdir(ns.path, ns.parents)
        if cmd == "rm":
            for p in ns.paths:
                self.cmd_rm(p)
            return None
        if cmd == "mv":
            return self.cmd_mv(ns.src, ns.dst)
        if cmd == "cp":
            strategy = AccessStrategy.WHOLE_FILE_LOCAL if ns.local_strategy else \
                AccessStrategy.REMOTE_PARTIAL
            return self.cmd_cp(ns.src, ns.dst, ns.route, strategy, ns.move)
        if cmd == "whereis":
            return self.cmd_whereis(ns.path)
        if cmd == "cat":
            return self.cmd_cat(ns.path)
        if cmd == "meta":
            return self.cmd_meta(ns.path, ns.tags)
        if cmd == "aioget":
            return self.cmd_aioget(ns.lfn, ns.local, ns.route)
        if cmd == "aioput":
            return self.cmd_aioput(ns.local, ns.lfn, ns.route)
        if cmd == "transfer":
            return self.cmd_transfer(ns.action, ns.arg, getattr(ns, "se", None), ns.move)
        if cmd == "cd":
            return self.cmd_cd(ns.path)
        if cmd == "pwd":
            return self.cmd_pwd()
        raise InvalidPath("unknown command %s" % cmd)

    def emit(self, result):
        if result is None:
            return
        if isinstance(result, bytes):
            buf = getattr(self.out, "buffer", None)
            if buf is not None:
                self.out.flush()
                buf.write(result)
                buf.flush()
            else:
                self.out.write(result.decode("utf-8", "replace"))
            return
        if result:
            self.out.write(result if result.endswith("\n") else result + "\n")

    def execute(self, argv, interactive=False):
        """Run one command line; returns the exit status."""
        parser = build_parser(interactive=interactive)
        try:
            ns = parser.parse_args(argv)
        except SystemExit as exc:
            return USAGE if exc.code else 0
        if getattr(ns, "command", None) is None:
            parser.print_usage(self.err)
            return USAGE
        try:
            self.emit(self.run_args(ns))
            return 0
        except GridError as exc:
            self.err.write("gridfs: %s: %s\n" % (exc.code, exc.msg))
            return exit_code(exc)
        except OSError as exc:
            self.err.write("gridfs: %s\n" % exc)
            return 1

    def repl(self, lines=None, prompt="gridfs:%s> "):
        """Read commands until EOF or ``exit``; errors never end the session."""
        interactive = lines is None
        source = lines if lines is not None else _stdin_lines(lambda: prompt % self.cwd)
        status = 0
        for line in source:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("exit", "quit"):
                break
            try:
                argv = shlex.split(line)
            except ValueError as exc:
                self.err.write("gridfs: %s\n" % exc)
                status = USAGE
                continue
            if argv[0] == "help":
                build_parser(interactive=True).print_help(self.out)
                continue
            status = self.execute(argv, interactive=True)
            if interactive:
                self.out.flush()
        return status


def _stdin_lines(prompt):
    tty = sys.stdin.isatty()
    while True:
        try:
            yield input(prompt() if tty else "")
        except EOFError:
            return


def _is_dir(client, lfn):
    try:
        return client.catalogue.stat(lfn)["type"] == "dir"
    except GridError:
        return False


# -- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("%s: error: %s\n" % (self.prog, message))
        raise SystemExit(USAGE)


def _add_grid_commands(sub):
    p = sub.add_parser("ls", help="list a directory")
    p.add_argument("-l", dest="long", action="store_true", help="long listing")
    p.add_argument("path", nargs="?")
    p = sub.add_parser("mkdir", help="create a directory")
    p.add_argument("-p", dest="parents", action="store_true")
    p.add_argument("path")
    p = sub.add_parser("rm", help="remove files or empty directories")
    p.add_argument("paths", nargs="+")
    p = sub.add_parser("mv", help="rename within the catalogue")
    p.add_argument("src")
    p.add_argument("dst")
    p = sub.add_parser("cp", help="copy between local disk and the grid, or between SEs")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--route")
    p.add_argument("--move", action="store_true", help="grid to grid: move instead of copy")
    p.add_argument("--whole", dest="local_strategy", action="store_true",
                   help="stage whole files on local disk")
    p = sub.add_parser("whereis", help="list physical locations, master first")
    p.add_argument("path")
    p = sub.add_parser("cat", help="print a grid file")
    p.add_argument("path")
    p = sub.add_parser("meta", help="show or set file metadata")
    p.add_argument("path")
    p.add_argument("tags", nargs="*", help="key=value pairs to set")
    p = sub.add_parser("aioget", help="fetch a file through the aiod servers")
    p.add_argument("lfn")
    p.add_argument("local")
    p.add_argument("--route")
    p = sub.add_parser("aioput", help="store a file through the aiod servers")
    p.add_argument("local")
    p.add_argument("lfn")
    p.add_argument("--route")
    p = sub.add_parser("transfer", help="queue or inspect asynchronous transfers")
    tsub = p.add_subparsers(dest="action", required=True)
    q = tsub.add_parser("enqueue")
    q.add_argument("arg", metavar="lfn")
    q.add_argument("se")
    q.add_argument("--move", action="store_true")
    q = tsub.add_parser("status")
    q.add_argument("arg", metavar="id")
    q.set_defaults(move=False)


def build_parser(interactive=False):
    parser = _Parser(prog="" if interactive else "gridfs",
                     description="Grid file system client and servers.")
    if not interactive:
        parser.add_argument("--config", default=os.environ.get("GRIDFS_CONFIG"),
                            help="JSON config file (default $GRIDFS_CONFIG)")
        parser.add_argument("--token", default=os.environ.get("GRIDFS_TOKEN"),
                            help="auth token (default $GRIDFS_TOKEN)")
        parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    _add_grid_commands(sub)
    if interactive:
        p = sub.add_parser("cd")
        p.add_argument("path", nargs="?", default="/")
        sub.add_parser("pwd")
    else:
        sub.add_parser("shell", help="interactive session")
        p = sub.add_parser("serve", help="run a server from the config file")
        p.add_argument("role", choices=["catalogue", "se", "aiod", "broker"])
    return parser


# -- configuration and servers ------------------------------------------------


def load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _client_from_config(cfg, token):
    from .transport import TcpTransport

    c = cfg.get("client", {})
    if "catalogue_addr" not in c:
        raise InvalidPath("config has no client.catalogue_addr")
    conf = ClientConfig.from_dict(dict(c, cache_dir=c.get("cache_dir") or
                                       os.path.join(tempfile.gettempdir(), "gridfs-cache")))
    transport = TcpTransport()
    client = GridClient(transport, conf, token or c.get("token"))
    broker = BrokerClient(transport, c["broker_addr"], client.token) if c.get("broker_addr") \
        else None
    return GridShell(client, broker, dir_cache_ttl_s=c.get("dir_cache_ttl_s", 5.0))


def serve(role, cfg, background=False):
    """Start one server role over TCP; returns the socket server."""
    from .clock import RealClock
    from .transport import TcpTransport, serve_tcp

    section = cfg.get(role)
    if section is None:
        raise InvalidPath("config has no %r section" % role)
    host, _, port = section["listen"].rpartition(":")
    clock = RealClock()
    if role == "catalogue":
        from .catalogue.service import CatalogueService

        service = CatalogueService.from_config(section)
    elif role == "se":
        from .storage.element import SeConfig, StorageElement
        from .storage.service import SeService

        service = SeService(StorageElement(SeConfig.from_dict(section)), section.get("tokens"))
    elif role == "aiod":
        from .aiod.gatekeeper import GateKeeperConfig
        from .aiod.server import AiodServer

        gk = GateKeeperConfig(section.get("roles", ()), section.get("slaves", ()),
                              int(section.get("cache_budget", 1 << 30)),
                              float(section.get("rate_limit", 0.0)))
        service = AiodServer(section["listen"], TcpTransport(), clock, section["catalogue_addr"],
                             section["cache_dir"], gk, auth=section.get("token"))
        if section.get("tokens") is not None:
            service.tokens = set(section["tokens"])
        if section.get("report_to"):
            service.start_monitor(section["report_to"],
                                  float(section.get("report_interval_s", 2.0)) * 1000.0)
    else:
        from .transfer import BrokerService, TransferBroker

        broker = TransferBroker(TcpTransport(), section["catalogue_addr"], section["token"], clock,
                                section.get("max_concurrent", 2), section.get("retry_limit", 3),
                                section.get("journal_path"))
        service = BrokerService(broker)
        interval = float(section.get("step_interval_s", 1.0))

        def pump():
            while True:
                if broker.pending():
                    broker.broker_step()
                time.sleep(interval)

        threading.Thread(target=pump, daemon=True, name="broker-pump").start()
    log.info("%s listening on %s", role, section["listen"])
    return serve_tcp(service, host or "0.0.0.0", int(port), background=background)


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return USAGE
    try:
        cfg = load_config(ns.config)
        if ns.command == "serve":
            serve(ns.role, cfg)
            return 0
        shell = _client_from_config(cfg, ns.token)
    except GridError as exc:
        sys.stderr.write("gridfs: %s: %s\n" % (exc.code, exc.msg))
        return exit_code(exc)
    except (OSError, ValueError, KeyError) as exc:
        sys.stderr.write("gridfs: bad configuration: %s\n" % exc)
        return USAGE
    if ns.command == "shell":
        return shell.repl()
    try:
        shell.emit(shell.run_args(ns))
        return 0
    except GridError as exc:
        sys.stderr.write("gridfs: %s: %s\n" % (exc.code, exc.msg))
        return exit_code(exc)
    except OSError as exc:
        sys.stderr.write("gridfs: %s\n" % exc)
        return 1


def entry():
    sys.exit(main())


# -- gridfs-sim ----------------------------------------------------------------


def sim_main(argv=None):
    from .scenario import run_scenario

    parser = argparse.ArgumentParser(prog="gridfs-sim",
                                     description="Run a scripted scenario on a simulated grid.")
    parser.add_argument("--scenario", help="JSON file with optional 'topology' and 'script'")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--trace", help="write the full event trace (JSON) to this file")
    parser.add_argument("--workdir", help="directory for simulated disks (default: temporary)")
    ns = parser.parse_args(argv)
    desc = load_config(ns.scenario) if ns.scenario else {}
    seed = ns.seed if ns.seed is not None else desc.get("seed", 7)
    with tempfile.TemporaryDirectory() as tmp:
        summary = run_scenario(ns.workdir or tmp, seed, desc.get("topology"), desc.get("script"))
    grid = summary.pop("grid")
    if ns.trace:
        with open(ns.trace, "w") as fh:
            json.dump(grid.net.trace, fh, indent=1)
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    failed = [s for s in summary["steps"] if not s["ok"] or
              (isinstance(s.get("value"), dict) and s["value"].get("match") is False)]
    return 1 if failed else 0


def sim_entry():
    sys.exit(sim_main())


if __name__ == "__main__":
    entry()
