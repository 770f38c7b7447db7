"""
Scenario files and the benchmark runner behind the command-line harness.

A scenario is a YAML mapping::

    name: leader-kill
    seed: 7
    duration_s: 25
    cluster:   {servers: 3, shards: 1, buckets: 64}
    network:   {latency_ms: [0.5, 2.0], drop_rate: 0.0, detection_timeout_ms: 100}
    workload:  {clients: 64, keys: 1024, distribution: uniform,
                mix: {get: 0.5, set: 0.4, delete: 0.05, cas: 0.05}}
    faults:
      - {at_s: 5, action: kill_leader}
    sweep:     {param: workload.keys, values: [4, 64, 1024, 16384]}
    check: false

Every section is optional. Fault actions: ``kill_leader`` (``shard``,
``recover_after_s``), ``crash`` (``server``, ``recover_after_s``), ``recover``
(``server``), ``set_drop_rate`` (``rate``), ``partition`` (``groups``) and
``heal``. ``check: true`` records the history and runs the linearizability
checker over it.
"""

from __future__ import annotations

import copy
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import yaml

from .checker import ClosedLoopClient, History, WorkloadParams, check, stream
from .client import ClientConfig
from .cluster import Cluster
from .node import LeaderObserver, NodeConfig
from .simnet import US_PER_SEC, SimConfig, Simulator, ms

CSV_HEADER = "t_sec,ops_completed,latency_mean_ms,latency_p99_ms"
SUMMARY_HEADER = "sweep_param,sweep_value,metric,value"

DEFAULTS = {
    "name": "scenario",
    "seed": 0,
    "duration_s": 10.0,
    "check": False,
    "cluster": {"servers": 3, "shards": 1, "buckets": 64},
    "network": {"latency_ms": [0.5, 2.0], "drop_rate": 0.0, "detection_timeout_ms": 100.0},
    "workload": {"clients": 64, "keys": 1024, "distribution": "uniform",
                 "mix": {"get": 0.5, "set": 0.4, "delete": 0.05, "cas": 0.05}},
    "faults": [],
    "sweep": None,
}

_NUMBER = (int, float)
_SCHEMA = {
    "name": str, "seed": int, "duration_s": _NUMBER, "check": bool,
    "cluster": {"servers": int, "shards": int, "buckets": int},
    "network": {"latency_ms": list, "drop_rate": _NUMBER, "detection_timeout_ms": _NUMBER},
    "workload": {"clients": int, "keys": int, "distribution": str, "mix": dict},
    "faults": list, "sweep": dict,
}
_FAULT_FIELDS = {
    "kill_leader": {"shard": int, "recover_after_s": _NUMBER},
    "crash": {"server": int, "recover_after_s": _NUMBER},
    "recover": {"server": int},
    "set_drop_rate": {"rate": _NUMBER},
    "partition": {"groups": list},
    "heal": {},
}


class ConfigError(ValueError):
    def __init__(self, message: str, field: str = "", line: Optional[int] = None):
        where = []
        if line is not None:
            where.append("line %d" % line)
        if field:
            where.append("field '%s'" % field)
        super().__init__("%s: %s" % (", ".join(where), message) if where else message)
        self.field = field
        self.line = line


# -- loading and validation ----------------------------------------------------

def _line_of(node, path):
    """1-based line of the YAML node at ``path`` (or of its closest ancestor)."""
    line = node.start_mark.line + 1 if node is not None else None
    for part in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == part), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) \
                and part < len(node.value):
            nxt = node.value[part]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def _type_ok(value, expected) -> bool:
    if expected is bool:
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    return isinstance(value, expected)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_scenario(text: str) -> dict:
    """Parse and validate scenario YAML; raises ConfigError with line and field."""
    try:
        root = yaml.compose(io.StringIO(text))
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(str(getattr(exc, "problem", exc)),
                          line=mark.line + 1 if mark else None) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", line=1)

    def fail(msg, path):
        raise ConfigError(msg, ".".join(str(p) for p in path), _line_of(root, path))

    def walk(data, schema, path):
        for key, value in data.items():
            here = path + [key]
            if key not in schema:
                fail("unknown field", here)
            expected = schema[key]
            if isinstance(expected, dict):
                if not isinstance(value, dict):
                    fail("expected a mapping", here)
                walk(value, expected, here)
            elif value is not None and not _type_ok(value, expected):
                names = expected.__name__ if isinstance(expected, type) else "number"
                fail("expected %s, got %r" % (names, value), here)

    walk(raw, _SCHEMA, [])
    cfg = _merge(DEFAULTS, raw)
    _check_values(cfg, fail)
    return cfg


def _check_values(cfg: dict, fail) -> None:
    if cfg["duration_s"] <= 0:
        fail("must be positive", ["duration_s"])
    c = cfg["cluster"]
    for k in ("servers", "shards", "buckets"):
        if c[k] < 1:
            fail("must be >= 1", ["cluster", k])
    net = cfg["network"]
    lat = net["latency_ms"]
    if len(lat) != 2 or not all(_type_ok(x, _NUMBER) for x in lat) or not 0 <= lat[0] <= lat[1]:
        fail("expected [min, max] with 0 <= min <= max", ["network", "latency_ms"])
    if not 0 <= net["drop_rate"] <= 1:
        fail("must be within [0, 1]", ["network", "drop_rate"])
    w = cfg["workload"]
    if w["clients"] < 1 or w["keys"] < 1:
        fail("must be >= 1", ["workload", "clients" if w["clients"] < 1 else "keys"])
    try:
        WorkloadParams(clients=w["clients"], keys=w["keys"], mix=w["mix"],
                       distribution=w["distribution"])
    except ValueError as exc:
        sub = "distribution" if "distribution" in str(exc) else "mix"
        fail(str(exc), ["workload", sub])
    for i, f in enumerate(cfg["faults"]):
        path = ["faults", i]
        if not isinstance(f, dict):
            fail("expected a mapping", path)
        action = f.get("action")
        if action not in _FAULT_FIELDS:
            fail("unknown action %r" % (action,), path + ["action"])
        if not _type_ok(f.get("at_s"), _NUMBER) or f["at_s"] < 0:
            fail("expected a non-negative number", path + ["at_s"])
        allowed = _FAULT_FIELDS[action]
        for k, v in f.items():
            if k in ("action", "at_s"):
                continue
            if k not in allowed:
                fail("unknown field for %s" % action, path + [k])
            if not _type_ok(v, allowed[k]):
                fail("bad value %r" % (v,), path + [k])
        if action in ("crash", "recover") and "server" not in f:
            fail("missing field", path + ["server"])
        if action == "set_drop_rate" and "rate" not in f:
            fail("missing field", path + ["rate"])
        if action == "partition" and "groups" not in f:
            fail("missing field", path + ["groups"])
    sweep = cfg["sweep"]
    if sweep is not None:
        param = sweep.get("param")
        parts = param.split(".") if isinstance(param, str) else []
        if not parts or get_path(cfg, parts, missing=True):
            fail("unknown sweep parameter %r" % (param,), ["sweep", "param"])
        values = sweep.get("values")
        if not isinstance(values, list) or not values:
            fail("expected a non-empty list", ["sweep", "values"])


_MISSING = object()


def get_path(cfg: dict, parts, missing: bool = False):
    node = cfg
    for p in parts:
        if not isinstance(node, dict) or p not in node:
            return True if missing else _MISSING
        node = node[p]
    return False if missing else node


def set_path(cfg: dict, dotted: str, value) -> dict:
    out = copy.deepcopy(cfg)
    parts = dotted.split(".")
    node = out
    for p in parts[:-1]:
        node = node[p]
    node[parts[-1]] = value
    return out


# -- running ------------------------------------------------------------------

@dataclass
class RunResult:
    name: str
    rows: List[tuple]                   # (t_sec, ops, mean_ms, p99_ms)
    acked_times: np.ndarray             # respond time (us) of every acknowledged op
    acked_latencies: np.ndarray         # its latency (us)
    duration_us: int
    trace: Optional[List[str]] = None
    leader_violations: list = field(default_factory=list)
    verdict: object = None
    history: Optional[History] = None
    cluster: object = None

    @property
    def throughput(self) -> float:
        return len(self.acked_times) * US_PER_SEC / self.duration_us

    def latency_mean_ms(self) -> float:
        return float(self.acked_latencies.mean()) / 1000 if len(self.acked_latencies) else float("nan")

    def latency_p99_ms(self) -> float:
        if not len(self.acked_latencies):
            return float("nan")
        return float(np.percentile(self.acked_latencies, 99)) / 1000

    @property
    def ok(self) -> bool:
        return not self.leader_violations and (self.verdict is None or self.verdict.ok)

    def csv(self) -> str:
        out = [CSV_HEADER]
        for t, n, mean, p99 in self.rows:
            out.append("%d,%d,%s,%s" % (t, n, _fmt(mean), _fmt(p99)))
        return "\n".join(out) + "\n"


def _fmt(x: float) -> str:
    return "nan" if x != x else "%.3f" % x


def per_second(times: np.ndarray, latencies: np.ndarray, duration_us: int) -> List[tuple]:
    seconds = int(np.ceil(duration_us / US_PER_SEC))
    bins = (times // US_PER_SEC).astype(np.int64)
    rows = []
    for t in range(seconds):
        lat = latencies[bins == t]
        if len(lat):
            rows.append((t, len(lat), float(lat.mean()) / 1000,
                         float(np.percentile(lat, 99)) / 1000))
        else:
            rows.append((t, 0, float("nan"), float("nan")))
    return rows


def _apply_fault(sim: Simulator, cluster: Cluster, f: dict) -> None:
    action = f["action"]
    recover = f.get("recover_after_s")
    recover_us = None if recover is None else int(recover * US_PER_SEC)
    if action == "kill_leader":
        shard = f.get("shard", 0)
        leader = cluster.leader(shard)
        if leader is None:
            # mid-election: retry shortly so the kill still lands on a leader
            sim.schedule(ms(1), _apply_fault, sim, cluster, f)
            return
        sim.crash(leader.server_id, recover_after=recover_us)
    elif action == "crash":
        sim.crash(f["server"], recover_after=recover_us)
    elif action == "recover":
        sim.recover(f["server"])
    elif action == "set_drop_rate":
        sim.set_drop_rate(f["rate"])
    elif action == "partition":
        sim.partition(f["groups"])
    elif action == "heal":
        sim.heal()


def build(cfg: dict, *, trace: bool = False, node_config: Optional[NodeConfig] = None):
    """Simulator, cluster and closed-loop clients for a validated scenario."""
    net = cfg["network"]
    sim = Simulator(SimConfig(seed=cfg["seed"], latency_min_ms=net["latency_ms"][0],
                              latency_max_ms=net["latency_ms"][1],
                              drop_rate=net["drop_rate"],
                              detection_timeout_ms=net["detection_timeout_ms"],
                              trace=trace))
    c = cfg["cluster"]
    observer = LeaderObserver(strict=False)
    cluster = Cluster(sim, range(c["servers"]), num_shards=c["shards"], observer=observer,
                      node_config=node_config or NodeConfig(num_buckets=c["buckets"]))
    cluster.bootstrap()
    w = cfg["workload"]
    params = WorkloadParams(clients=w["clients"], keys=w["keys"], mix=w["mix"],
                            distribution=w["distribution"])
    history = History() if cfg["check"] else None
    runners = []
    for i in range(w["clients"]):
        client = cluster.add_client(
            "c%d" % i, ClientConfig(detection_timeout_ms=net["detection_timeout_ms"]))
        runners.append(ClosedLoopClient(sim, client, stream(cfg["seed"], params, i),
                                        history=history))
    for f in cfg["faults"]:
        sim.schedule(int(f["at_s"] * US_PER_SEC), _apply_fault, sim, cluster, f)
    return sim, cluster, runners, history


def run(cfg: dict, *, trace: bool = False, node_config: Optional[NodeConfig] = None,
        setup=None) -> RunResult:
    """Run one scenario (no sweep) to its configured duration."""
    sim, cluster, runners, history = build(cfg, trace=trace, node_config=node_config)
    if setup is not None:
        setup(sim, cluster, runners)
    for r in runners:
        r.start()
    duration = int(cfg["duration_s"] * US_PER_SEC)
    sim.run_until(duration)
    for r in runners:
        r.stop()
    samples = sorted(s for r in runners for s in r.latencies if s[2] and s[0] < duration)
    times = np.array([s[0] for s in samples], dtype=np.int64)
    lats = np.array([s[1] for s in samples], dtype=np.int64)
    verdict = check(history) if history is not None else None
    return RunResult(cfg["name"], per_second(times, lats, duration), times, lats, duration,
                     sim.trace, list(cluster.observer.violations), verdict, history, cluster)


def sweep_runs(cfg: dict):
    """(value, config) per sweep point; a single (None, cfg) without a sweep."""
    sweep = cfg.get("sweep")
    if not sweep:
        return [(None, cfg)]
    runs = []
    for v in sweep["values"]:
        sub = set_path(cfg, sweep["param"], v)
        sub["sweep"] = None
        sub["name"] = "%s-%s" % (cfg["name"], v)
        runs.append((v, sub))
    return runs


def summary_rows(param: str, value, result: RunResult) -> List[str]:
    metrics = [
        ("ops_completed", "%d" % len(result.acked_times)),
        ("throughput_ops_s", "%.3f" % result.throughput),
        ("latency_mean_ms", _fmt(result.latency_mean_ms())),
        ("latency_p99_ms", _fmt(result.latency_p99_ms())),
    ]
    return ["%s,%s,%s,%s" % (param, value, m, v) for m, v in metrics]
