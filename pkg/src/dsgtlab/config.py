"""Experiment configuration files.

Format: ``[section]`` headers followed by ``key = value`` lines.  ``#``
starts a comment when it begins a line or follows whitespace.  Lists are
comma-separated.  Unknown sections or keys, missing required keys and
malformed values are errors that name the key and the line.

Sections and keys::

    [problem]    kind*, data, samples, dim, targets, data_seed, separation,
                 low, high, proportions, shuffle, eta, batch_size
    [topology]   kind*, n, degree, seed, file, matrix
    [algorithm]  kind*, x0, M
    [schedule]   kind, gamma0, a, p, factor, scale_by_n
    [run]        K*, seeds*, output, stride, divergence_threshold, threads,
                 node_threads, epsilon, bound, node_grads

Starred keys are required.  See the README for the meaning of each key.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .algorithms import ALGORITHMS
from .problems import LOSS_KINDS
from .topology import TOPOLOGY_KINDS

__all__ = [
    "ConfigError",
    "ProblemSpec",
    "TopologySpec",
    "AlgorithmSpec",
    "ScheduleSpec",
    "RunSpec",
    "ExperimentConfig",
    "parse_config",
    "parse_config_text",
    "serialize",
    "with_value",
    "SCHEDULE_KINDS",
]

SCHEDULE_KINDS = ("constant", "diminishing", "cap", "tuned")
_REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if key is not None:
            where += f"key '{key}'"
        if line is not None:
            where += f" (line {line})" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.key = key
        self.line = line


def _opt(kind: str, default: Any = None):
    return field(default=default, metadata={"type": kind})


def _req(kind: str):
    return field(default=None, metadata={"type": kind, "required": True})


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = _req("str")
    data: str = _opt("str", "synthetic")
    samples: int = _opt("int", 64)
    dim: int = _opt("int", 1)
    targets: tuple[float, ...] | None = _opt("floats")
    data_seed: int = _opt("int", 0)
    separation: float = _opt("float", 1.0)
    low: float = _opt("float", 0.0)
    high: float = _opt("float", 1.0)
    proportions: tuple[float, ...] | None = _opt("floats")
    shuffle: bool = _opt("bool", True)
    eta: float = _opt("float", 1.0)
    batch_size: int | None = _opt("int")


@dataclass(frozen=True)
class TopologySpec:
    kind: str = _req("str")
    n: int | None = _opt("int")
    degree: int | None = _opt("int")
    seed: int = _opt("int", 0)
    file: str | None = _opt("str")
    matrix: str = _opt("str", "metropolis")


@dataclass(frozen=True)
class AlgorithmSpec:
    kind: str = _req("str")
    x0: tuple[float, ...] = _opt("floats", (0.0,))
    M: int | None = _opt("int")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = _opt("str", "cap")
    gamma0: float | None = _opt("float")
    a: float | None = _opt("float")
    p: float = _opt("float", 0.5)
    factor: float = _opt("float", 1.0)
    scale_by_n: bool = _opt("bool", False)


@dataclass(frozen=True)
class RunSpec:
    K: int = _req("int")
    seeds: tuple[int, ...] = _req("ints")
    output: str = _opt("str", "runs")
    stride: int = _opt("int", 1)
    divergence_threshold: float = _opt("float", 1e6)
    threads: int | None = _opt("int")
    node_threads: int = _opt("int", 1)
    epsilon: float | None = _opt("float")
    bound: bool = _opt("bool", False)
    node_grads: bool = _opt("bool", False)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    topology: TopologySpec
    algorithm: AlgorithmSpec
    schedule: ScheduleSpec
    run: RunSpec

    @property
    def n(self) -> int:
        if self.algorithm.kind == "centralized_sgd" and self.topology.n is None:
            return 1
        return 3 if self.topology.kind == "fixture3" else int(self.topology.n)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "problem": ProblemSpec,
    "topology": TopologySpec,
    "algorithm": AlgorithmSpec,
    "schedule": ScheduleSpec,
    "run": RunSpec,
}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    for i, ch in enumerate(line):
        if ch == "#" and i > 0 and line[i - 1] in " \t":
            return line[:i]
    return line


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(kind: str, raw: str, key: str, line: int):
    try:
        if kind == "str":
            if not raw:
                raise ValueError("empty value")
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(","))
        if kind == "ints":
            return tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"expected {kind}, got {raw!r}", key, line) from None
    raise AssertionError(kind)


def parse_config(path) -> ExperimentConfig:
    """Read and validate a configuration file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, base_dir=path.parent)


def parse_config_text(text: str, base_dir=None) -> ExperimentConfig:
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    values: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    lines: dict[str, int] = {}
    section: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", line=lineno)
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]; expected one of {sorted(_SECTIONS)}", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, raw_value = (s.strip() for s in line.split("=", 1))
        if section is None:
            raise ConfigError("key outside any section", key, lineno)
        qual = f"{section}.{key}"
        spec = {f.name: f for f in fields(_SECTIONS[section])}
        if key not in spec:
            raise ConfigError(f"unknown key in [{section}]", qual, lineno)
        if qual in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[qual]})", qual, lineno)
        values[section][key] = _convert(spec[key].metadata["type"], raw_value, qual, lineno)
        lines[qual] = lineno

    built = {}
    for name, cls in _SECTIONS.items():
        for f in fields(cls):
            if f.metadata.get("required") and f.name not in values[name]:
                raise ConfigError(f"missing required key in [{name}]", f"{name}.{f.name}")
        built[name] = cls(**values[name])
    cfg = ExperimentConfig(**built)
    cfg = _resolve_paths(cfg, base)
    _validate(cfg, lines)
    return cfg


def _resolve(p: str | None, base: Path) -> str | None:
    if p is None:
        return None
    q = Path(p)
    return str(q if q.is_absolute() else (base / q).resolve())


def _resolve_paths(cfg: ExperimentConfig, base: Path) -> ExperimentConfig:
    prob = cfg.problem
    if prob.data != "synthetic":
        prob = replace(prob, data=_resolve(prob.data, base))
    top = replace(cfg.topology, file=_resolve(cfg.topology.file, base))
    if top.matrix not in ("metropolis", "fixture3"):
        top = replace(top, matrix=_resolve(top.matrix, base))
    run = replace(cfg.run, output=_resolve(cfg.run.output, base))
    return replace(cfg, problem=prob, topology=top, run=run)


def _validate(cfg: ExperimentConfig, lines: dict[str, int]) -> None:
    def fail(msg: str, key: str):
        raise ConfigError(msg, key, lines.get(key))

    p, t, a, s, r = cfg.problem, cfg.topology, cfg.algorithm, cfg.schedule, cfg.run
    if p.kind not in LOSS_KINDS:
        fail(f"unknown loss {p.kind!r}; expected one of {LOSS_KINDS}", "problem.kind")
    if p.data != "synthetic" and not os.path.isfile(p.data):
        fail(f"dataset file {p.data} does not exist", "problem.data")
    if p.targets is not None and p.kind != "least_squares":
        fail("explicit targets are only meaningful for least squares", "problem.targets")
    if p.samples < 1:
        fail("need at least one sample", "problem.samples")
    if p.dim < 1:
        fail("dimension must be positive", "problem.dim")
    if not 0.0 < p.eta <= 1.0:
        fail(f"batch fraction must lie in (0, 1], got {p.eta}", "problem.eta")
    if p.batch_size is not None and p.batch_size < 1:
        fail("batch size must be positive", "problem.batch_size")

    if t.kind not in TOPOLOGY_KINDS + ("fixture3",):
        fail(f"unknown topology {t.kind!r}", "topology.kind")
    if t.kind == "fixture3":
        if t.n not in (None, 3):
            fail("the built-in 3-node fixture has n = 3", "topology.n")
    elif t.n is None and not (a.kind == "centralized_sgd"):
        fail("topology needs n", "topology.n")
    elif t.n is not None and t.n < 1:
        fail("n must be positive", "topology.n")
    if t.kind == "k_regular_random" and t.degree is None:
        fail("k_regular_random needs a degree", "topology.degree")
    if t.kind == "explicit":
        if t.file is None:
            fail("explicit topology needs an edge file", "topology.file")
        if not os.path.isfile(t.file):
            fail(f"edge file {t.file} does not exist", "topology.file")
    if t.matrix not in ("metropolis", "fixture3") and not os.path.isfile(t.matrix):
        fail(f"mixing matrix file {t.matrix} does not exist", "topology.matrix")

    if a.kind not in ALGORITHMS:
        fail(f"unknown algorithm {a.kind!r}; expected one of {ALGORITHMS}", "algorithm.kind")
    if a.M is not None and a.M < 1:
        fail("centralized batch size must be positive", "algorithm.M")

    if s.kind not in SCHEDULE_KINDS:
        fail(f"unknown schedule {s.kind!r}; expected one of {SCHEDULE_KINDS}", "schedule.kind")
    if s.kind == "constant" and s.gamma0 is None:
        fail("constant schedule needs gamma0", "schedule.gamma0")
    if s.kind == "diminishing":
        if s.a is None:
            fail("diminishing schedule needs a", "schedule.a")
        if not 0.5 <= s.p <= 1.0:
            fail(f"p must lie in [0.5, 1], got {s.p}", "schedule.p")
    if s.factor <= 0:
        fail("factor must be positive", "schedule.factor")

    if r.K < 0:
        fail("K must be >= 0", "run.K")
    if not r.seeds:
        fail("need at least one seed", "run.seeds")
    if r.stride < 1:
        fail("stride must be >= 1", "run.stride")
    if r.divergence_threshold <= 0:
        fail("divergence threshold must be positive", "run.divergence_threshold")
    if r.threads is not None and r.threads < 1:
        fail("threads must be >= 1", "run.threads")
    if r.node_threads < 1:
        fail("node_threads must be >= 1", "run.node_threads")

    n = cfg.n
    if p.proportions is not None and len(p.proportions) != n:
        fail(f"{len(p.proportions)} proportions for {n} nodes", "problem.proportions")
    if p.targets is not None and len(p.targets) < n:
        fail(f"{len(p.targets)} targets cannot cover {n} nodes", "problem.targets")
    if p.data == "synthetic" and p.targets is None and p.samples < n:
        fail(f"{p.samples} samples cannot cover {n} nodes", "problem.samples")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _format(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "ints":
        return ", ".join(str(int(v)) for v in value)
    return str(value)


def serialize(cfg: ExperimentConfig) -> str:
    """Render a config that :func:`parse_config_text` reads back to an equal object."""
    out = []
    for name in _SECTIONS:
        out.append(f"[{name}]")
        spec = getattr(cfg, name)
        for f in fields(spec):
            v = getattr(spec, f.name)
            if v is None:
                continue
            out.append(f"{f.name} = {_format(f.metadata['type'], v)}")
        out.append("")
    return "\n".join(out)


def with_value(cfg: ExperimentConfig, dotted: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with ``section.key`` set to ``value`` (revalidated)."""
    section, key = dotted.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError("unknown section", dotted)
    spec = getattr(cfg, section)
    if key not in {f.name for f in fields(spec)}:
        raise ConfigError("unknown key", dotted)
    new = replace(cfg, **{section: replace(spec, **{key: value})})
    _validate(new, {})
    return new
