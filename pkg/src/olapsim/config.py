"""Scenario files: sectioned ``key = value`` text resolved to a validated config.

Example::

    # heterogeneous array, response-time routing
    [servers]
    speed_factors = [1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5]

    [routing]
    policy = response_time_weighted
    ewma_alpha = 0.1

    [workload]
    interarrival = exponential(1.0)

Values are numbers, ``true``/``false``, bare words, quoted strings, lists
(``[1, 2]``, nested allowed) or distribution constructors ``constant(c)``,
``uniform(lo, hi)``, ``exponential(mean)`` and ``uniform_int(lo, hi)``.
Anything left out takes the reference-experiment default, so an empty file
is the reference scenario.
"""

from __future__ import annotations

import ast
import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field, fields
from typing import Any, Callable

from . import topology as topo
from .cluster import Placement
from .engine import DistKind, DistributionSpec
from .routing import PolicyKind
from .workload import REFERENCE_QUERY_SIZE, SessionMode

DEFAULT_MAX_EVENTS = 50_000_000


class ConfigError(ValueError):
    exit_code = 1


class ParseError(ConfigError):
    exit_code = 2

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ValidationError(ConfigError):
    exit_code = 3

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("invalid scenario:\n  " + "\n  ".join(diagnostics))


# ---------------------------------------------------------------------------
# value syntax

_DIST_RE = re.compile(r"^([a-z_]+)\s*\((.*)\)$")
_WORD_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
_DISTS = {
    "constant": (DistributionSpec.constant, 1),
    "uniform": (DistributionSpec.uniform, 2),
    "exponential": (DistributionSpec.exponential, 1),
    "uniform_int": (DistributionSpec.uniform_int, 2),
}


@dataclass(frozen=True)
class DistLiteral:
    name: str
    args: tuple


def parse_value(text: str) -> Any:
    """Parse one value; raises ``ValueError`` on malformed input."""
    text = text.strip()
    if not text:
        raise ValueError("missing value")
    m = _DIST_RE.match(text)
    if m:
        args = ast.literal_eval(f"({m.group(2)},)") if m.group(2).strip() else ()
        return DistLiteral(m.group(1), tuple(args))
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        pass
    if _WORD_RE.match(text):
        return text
    raise ValueError(f"cannot parse value {text!r}")


# ---------------------------------------------------------------------------
# coercers: raw parsed value -> typed field value, ValueError on mismatch


def _number(v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def as_int(v: Any) -> int:
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return v


def as_float(v: Any) -> float:
    x = _number(v)
    if math.isnan(x):
        raise ValueError("NaN is not allowed")
    return x


def as_bool(v: Any) -> bool:
    if not isinstance(v, bool):
        raise ValueError(f"expected true or false, got {v!r}")
    return v


def as_dist(v: Any) -> DistributionSpec:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return DistributionSpec.constant(v)
    if not isinstance(v, DistLiteral):
        raise ValueError(f"expected a distribution such as constant(1), got {v!r}")
    if v.name not in _DISTS:
        raise ValueError(f"unknown distribution {v.name!r} (known: {', '.join(_DISTS)})")
    ctor, arity = _DISTS[v.name]
    if len(v.args) != arity:
        raise ValueError(f"{v.name} takes {arity} argument(s), got {len(v.args)}")
    spec = ctor(*(as_float(a) for a in v.args))
    bad = spec.problems()
    if bad:
        raise ValueError("; ".join(bad))
    return spec


def choice(enum_cls) -> Callable[[Any], Any]:
    def coerce(v: Any):
        try:
            return enum_cls(v)
        except ValueError:
            allowed = ", ".join(e.value for e in enum_cls)
            raise ValueError(f"expected one of {allowed}, got {v!r}") from None

    return coerce


def float_list(v: Any) -> tuple[float, ...]:
    if not isinstance(v, (list, tuple)):
        raise ValueError(f"expected a list of numbers, got {v!r}")
    return tuple(as_float(x) for x in v)


def matrix_or_word(word: str, cell: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def coerce(v: Any):
        if v == word:
            return word
        if not isinstance(v, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in v):
            raise ValueError(f"expected {word!r} or a list of lists")
        return tuple(tuple(cell(x) for x in row) for row in v)

    return coerce


def duty(v: Any):
    if v == "auto":
        return "auto"
    x = as_float(v)
    if not 0 < x <= 1:
        raise ValueError(f"duty_cycle must be in (0, 1], got {x:g}")
    return x


def optional_str(v: Any):
    if v is None or v == "none":
        return None
    if not isinstance(v, str):
        raise ValueError(f"expected a path, got {v!r}")
    return v


def _f(default, coerce):
    return field(default=default, metadata={"coerce": coerce})


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class TopologyConfig:
    lans: int = _f(6, as_int)
    users_per_lan: int = _f(500, as_int)
    gateways: int = _f(3, as_int)
    olap_servers: int = _f(4, as_int)
    rdbms_servers: int = _f(8, as_int)
    cloud_bandwidth: float = _f(topo.CLOUD_BANDWIDTH, as_float)
    cloud_latency: float = _f(topo.CLOUD_LATENCY, as_float)
    extranet_bandwidth: float = _f(topo.EXTRANET_BANDWIDTH, as_float)
    extranet_latency: float = _f(topo.EXTRANET_LATENCY, as_float)
    flow_weights: Any = _f("even", matrix_or_word("even", as_float))
    destinations: Any = _f("all", matrix_or_word("all", as_int))


@dataclass(frozen=True)
class WorkloadConfig:
    mode: SessionMode = _f(SessionMode.ALWAYS_ON, choice(SessionMode))
    target_aggregate: float = _f(320.0, as_float)
    duty_cycle: Any = _f("auto", duty)
    start_time: DistributionSpec = _f(DistributionSpec.uniform(50, 55), as_dist)
    start_offset: DistributionSpec = _f(DistributionSpec.uniform(5, 10), as_dist)
    inter_repetition: DistributionSpec = _f(DistributionSpec.exponential(300), as_dist)
    on_duration: DistributionSpec = _f(DistributionSpec.exponential(600), as_dist)
    repetitions_unlimited: bool = _f(True, as_bool)
    objects_per_page: DistributionSpec = _f(DistributionSpec.uniform_int(7, 10), as_dist)
    object_size: DistributionSpec = _f(DistributionSpec.uniform(5120, 10240), as_dist)
    object_refresh: float = _f(1.0, as_float)
    page_refresh: float = _f(10.0, as_float)
    query_mix: float = _f(1.0, as_float)
    interarrival: DistributionSpec = _f(DistributionSpec.constant(1), as_dist)
    query_size: DistributionSpec = _f(DistributionSpec.constant(10240), as_dist)
    partitions: int = _f(8, as_int)
    partition_skew: float = _f(0.0, as_float)


@dataclass(frozen=True)
class ServersConfig:
    base_service_time: float = _f(0.02, as_float)
    # None: every server at speed 1.0
    speed_factors: Any = _f(None, float_list)
    placement: Placement = _f(Placement.REPLICATED_ALL, choice(Placement))
    placement_map: Any = _f(None, lambda v: None if v in (None, "none") else matrix_or_word("none", as_int)(v))
    service_noise: float = _f(0.0, as_float)
    reference_size: float = _f(REFERENCE_QUERY_SIZE, as_float)


@dataclass(frozen=True)
class RoutingConfig:
    policy: PolicyKind = _f(PolicyKind.FLOW_WEIGHTED, choice(PolicyKind))
    ewma_alpha: float = _f(0.1, as_float)


@dataclass(frozen=True)
class RunConfig:
    seed: int = _f(1, as_int)
    max_events: int = _f(DEFAULT_MAX_EVENTS, as_int)
    end_time: float = _f(math.inf, as_float)
    warmup: float = _f(100.0, as_float)
    bucket_width: float = _f(1.0, as_float)
    reservoir_size: int = _f(10_000, as_int)
    output_dir: Any = _f(None, optional_str)


SECTIONS = {
    "topology": TopologyConfig,
    "workload": WorkloadConfig,
    "servers": ServersConfig,
    "routing": RoutingConfig,
    "run": RunConfig,
}

# keys excluded from the config hash (they do not change results)
UNHASHED = {("run", "output_dir")}


@dataclass(frozen=True)
class ScenarioConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    servers: ServersConfig = field(default_factory=ServersConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # -- resolved views -----------------------------------------------------

    @property
    def speed_factors(self) -> tuple[float, ...]:
        sf = self.servers.speed_factors
        return tuple(sf) if sf is not None else (1.0,) * self.topology.rdbms_servers

    @property
    def flow_matrix(self) -> tuple[tuple[float, ...], ...]:
        t = self.topology
        if t.flow_weights == "even":
            return tuple((1.0 / t.rdbms_servers,) * t.rdbms_servers for _ in range(t.olap_servers))
        return t.flow_weights

    @property
    def destination_lists(self) -> tuple[tuple[int, ...], ...]:
        t = self.topology
        if t.destinations == "all":
            return tuple(tuple(range(t.olap_servers)) for _ in range(t.lans))
        return t.destinations

    def to_dict(self) -> dict:
        """Fully resolved, JSON-ready view (defaults filled in, shorthands expanded)."""
        out: dict[str, dict] = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name)) for f in fields(sec)}
        out["topology"]["flow_weights"] = _plain(self.flow_matrix)
        out["topology"]["destinations"] = _plain(self.destination_lists)
        out["servers"]["speed_factors"] = _plain(self.speed_factors)
        return out

    def dump(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        d = self.to_dict()
        for sec, key in UNHASHED:
            d[sec].pop(key, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, overrides: dict[str, Any]) -> ScenarioConfig:
        """Apply ``{"section.key": value}`` overrides (values raw text or typed)."""
        cfg = self
        errors: list[str] = []
        for dotted, raw in overrides.items():
            sec_name, _, key = dotted.partition(".")
            if sec_name not in SECTIONS or key not in _field_map(SECTIONS[sec_name]):
                errors.append(f"{dotted}: unknown field")
                continue
            try:
                value = parse_value(raw) if isinstance(raw, str) else raw
                value = _field_map(SECTIONS[sec_name])[key].metadata["coerce"](value)
            except (ValueError, SyntaxError) as exc:
                errors.append(f"{dotted}: {exc}")
                continue
            sec = dataclasses.replace(getattr(cfg, sec_name), **{key: value})
            cfg = dataclasses.replace(cfg, **{sec_name: sec})
        if errors:
            raise ValidationError(errors)
        problems = validate_config(cfg)
        if problems:
            raise ValidationError(problems)
        return cfg


def _plain(v: Any) -> Any:
    if isinstance(v, DistributionSpec):
        return str(v)
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if hasattr(v, "value") and isinstance(getattr(v, "value"), str):
        return v.value
    return v


def _field_map(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in fields(cls)}


# ---------------------------------------------------------------------------
# parse + validate


def parse(text: str) -> ScenarioConfig:
    """Parse scenario text; raises :class:`ParseError` or :class:`ValidationError`."""
    raw: dict[str, dict[str, tuple[int, Any]]] = {name: {} for name in SECTIONS}
    errors: list[str] = []
    section: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(line).strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ParseError(lineno, f"malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                errors.append(f"line {lineno}: unknown section [{section}] (known: {', '.join(SECTIONS)})")
                section = "__unknown__"
            continue
        if "=" not in stripped:
            raise ParseError(lineno, f"expected 'key = value', got {stripped!r}")
        if section is None:
            raise ParseError(lineno, "key outside of any [section]")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not _WORD_RE.match(key):
            raise ParseError(lineno, f"invalid key {key!r}")
        try:
            parsed = parse_value(value)
        except (ValueError, SyntaxError) as exc:
            raise ParseError(lineno, f"{key}: {exc}") from None
        if section == "__unknown__":
            continue
        if key in raw[section]:
            raise ParseError(lineno, f"duplicate key {section}.{key}")
        raw[section][key] = (lineno, parsed)

    built = {}
    for name, cls in SECTIONS.items():
        fmap = _field_map(cls)
        kwargs = {}
        for key, (lineno, value) in raw[name].items():
            if key not in fmap:
                errors.append(f"{name}.{key} (line {lineno}): unknown field")
                continue
            try:
                kwargs[key] = fmap[key].metadata["coerce"](value)
            except ValueError as exc:
                errors.append(f"{name}.{key} (line {lineno}): {exc}")
        built[name] = cls(**kwargs)
    if errors:
        raise ValidationError(errors)
    cfg = ScenarioConfig(**built)
    problems = validate_config(cfg)
    if problems:
        lines = {f"{s}.{k}": ln for s, keys in raw.items() for k, (ln, _) in keys.items()}
        raise ValidationError([_with_line(p, lines) for p in problems])
    return cfg


def _strip_comment(line: str) -> str:
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


def _with_line(problem: str, lines: dict[str, int]) -> str:
    dotted = problem.split(":", 1)[0]
    if dotted in lines:
        return f"{dotted} (line {lines[dotted]}):{problem.split(':', 1)[1]}"
    return problem


def validate_config(cfg: ScenarioConfig) -> list[str]:
    """Cross-field checks; each problem starts with ``section.key:``."""
    p: list[str] = []
    t, w, s, r, run = cfg.topology, cfg.workload, cfg.servers, cfg.routing, cfg.run

    for key in ("lans", "users_per_lan", "gateways", "olap_servers", "rdbms_servers"):
        if getattr(t, key) < 1:
            p.append(f"topology.{key}: must be >= 1")
    for key in ("cloud_bandwidth", "extranet_bandwidth"):
        if not getattr(t, key) > 0:
            p.append(f"topology.{key}: must be > 0")
    for key in ("cloud_latency", "extranet_latency"):
        if not getattr(t, key) >= 0:
            p.append(f"topology.{key}: must be >= 0")
    if p:
        return p

    if t.flow_weights != "even":
        if len(t.flow_weights) != t.olap_servers:
            p.append(f"topology.flow_weights: {len(t.flow_weights)} rows for {t.olap_servers} OLAP servers")
        for i, row in enumerate(t.flow_weights):
            if len(row) != t.rdbms_servers:
                p.append(f"topology.flow_weights: row {i + 1} has {len(row)} weights for {t.rdbms_servers} servers")
            elif abs(math.fsum(row) - 1.0) > topo.FLOW_TOLERANCE:
                p.append(f"topology.flow_weights: row {i + 1} sums to {math.fsum(row):.12g}, expected 1")
    if t.destinations != "all":
        if len(t.destinations) != t.lans:
            p.append(f"topology.destinations: {len(t.destinations)} lists for {t.lans} LANs")
        for i, prefs in enumerate(t.destinations):
            if not prefs or any(not 0 <= k < t.olap_servers for k in prefs):
                p.append(f"topology.destinations: LAN {i + 1} needs OLAP indices in [0, {t.olap_servers})")
    if not p:
        p += [f"topology: {v}" for v in topo.validate(build_topology(cfg))]

    if not w.page_refresh > 0 or not w.object_refresh > 0:
        p.append("workload.page_refresh: refresh periods must be > 0")
    else:
        ratio = w.page_refresh / w.object_refresh
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            p.append("workload.page_refresh: object_refresh must divide page_refresh")
    if w.objects_per_page.kind not in (DistKind.CONSTANT, DistKind.UNIFORM_INT):
        p.append("workload.objects_per_page: must be constant(n) or uniform_int(lo, hi)")
    if w.query_mix != 1.0:
        p.append("workload.query_mix: only query-only load (1.0) is modelled")
    if not w.interarrival.mean > 0:
        p.append("workload.interarrival: mean must be > 0")
    qs = w.query_size
    if (qs.kind == DistKind.CONSTANT and not qs.a > 0) or (qs.kind == DistKind.UNIFORM and not qs.a > 0):
        p.append("workload.query_size: sizes must be > 0")
    if w.partitions < 1:
        p.append("workload.partitions: must be >= 1")
    if w.partition_skew < 0:
        p.append("workload.partition_skew: must be >= 0")
    if not w.target_aggregate > 0:
        p.append("workload.target_aggregate: must be > 0")
    elif w.duty_cycle == "auto" and w.interarrival.mean > 0:
        users = t.lans * t.users_per_lan
        need = w.target_aggregate * w.interarrival.mean / users
        if need > 1.0:
            p.append(
                f"workload.target_aggregate: {w.target_aggregate:g} q/s needs duty cycle "
                f"{need:.4f} > 1 with {users} users"
            )

    if not s.base_service_time > 0:
        p.append("servers.base_service_time: must be > 0")
    if not s.reference_size > 0:
        p.append("servers.reference_size: must be > 0")
    if not 0 <= s.service_noise < 1:
        p.append("servers.service_noise: must be in [0, 1)")
    if s.speed_factors is not None:
        if len(s.speed_factors) != t.rdbms_servers:
            p.append(
                f"servers.speed_factors: {len(s.speed_factors)} values for {t.rdbms_servers} RDBMS servers"
            )
        if any(not x > 0 for x in s.speed_factors):
            p.append("servers.speed_factors: every factor must be > 0")
    if s.placement == Placement.ONE_PER_SERVER and w.partitions != t.rdbms_servers:
        p.append(
            f"servers.placement: one_per_server needs partitions ({w.partitions}) == rdbms_servers ({t.rdbms_servers})"
        )
    if s.placement == Placement.CUSTOM:
        pm = s.placement_map
        if pm is None:
            p.append("servers.placement_map: required for custom placement")
        elif len(pm) != w.partitions:
            p.append(f"servers.placement_map: {len(pm)} host lists for {w.partitions} partitions")
        else:
            from .cluster import make_partition_map

            p += [f"servers.placement_map: {v}" for v in make_partition_map(Placement.CUSTOM, t.rdbms_servers, w.partitions, pm).problems()]

    if not 0 < r.ewma_alpha <= 1:
        p.append("routing.ewma_alpha: must be in (0, 1]")

    if run.max_events < 0:
        p.append("run.max_events: must be >= 0")
    if not run.end_time > 0:
        p.append("run.end_time: must be > 0")
    if not run.warmup >= 0:
        p.append("run.warmup: must be >= 0")
    if not (run.bucket_width > 0 and math.isfinite(run.bucket_width)):
        p.append("run.bucket_width: must be > 0")
    if run.reservoir_size < 1:
        p.append("run.reservoir_size: must be >= 1")
    if not 0 <= run.seed < 2**64:
        p.append("run.seed: must be a 64-bit unsigned integer")
    return p


def build_topology(cfg: ScenarioConfig) -> topo.Topology:
    t = cfg.topology
    return topo.build_topology(
        lans=t.lans,
        users_per_lan=t.users_per_lan,
        gateways=t.gateways,
        olap_servers=t.olap_servers,
        rdbms_servers=t.rdbms_servers,
        cloud_bandwidth=t.cloud_bandwidth,
        cloud_latency=t.cloud_latency,
        extranet_bandwidth=t.extranet_bandwidth,
        extranet_latency=t.extranet_latency,
        flow=cfg.flow_matrix,
        destinations=cfg.destination_lists,
    )


def load(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())
