"""Scenario files: one INI-style text file describing a full episode.

Every tunable that the planner, simulator, or optimizer consumes appears
here under an explicit key, so a run is reproducible from the scenario
file plus a seed alone.  Unknown sections or keys are rejected with the
offending line number rather than silently ignored.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .geometry import Point2
from .mpc import MpcConfig
from .planner import PlannerThresholds
from .sim import DistributionSpec, MetricsConfig, Rect, WorldConfig

POLICIES = ("herding", "direct")


class ScenarioError(Exception):
    """Malformed scenario file; carries a 1-based line number when known."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = int(line)
        if self.line > 0:
            text = f"{self.path}:{self.line}: {message}"
        else:
            text = f"{self.path}: {message}"
        super().__init__(text)


@dataclass(frozen=True)
class Scenario:
    """Fully resolved run description."""

    name: str
    world: WorldConfig
    distribution: DistributionSpec
    metrics: MetricsConfig
    mpc: MpcConfig
    thresholds: PlannerThresholds
    policy: str = "herding"
    out_dir: Optional[str] = None


# Section -> key -> value kind.  Kinds: f float, i int, s string,
# p point "x y", r rect "xmin ymin xmax ymax".
_SCHEMA = {
    "world": {
        "arena": "r",
        "gate": "p",
        "gate_width": "f",
        "particle_radius": "f",
        "crossbar": "f",
        "stem": "f",
        "substep": "f",
        "seed": "i",
    },
    "distribution": {
        "shape": "s",
        "count": "i",
        "center": "p",
        "radius": "f",
        "width": "f",
        "height": "f",
        "inner": "f",
        "outer": "f",
        "path": "s",
    },
    "metrics": {
        "harmonics": "i",
        "boundary_samples": "i",
        "metric_samples": "i",
        "dilation": "f",
        "resolution": "f",
        "gap_epsilon": "f",
    },
    "mpc": {
        "horizon": "i",
        "dt": "f",
        "d_min": "f",
        "v_max": "f",
        "omega_max": "f",
        "penalty": "f",
        "max_iterations": "i",
        "step_size": "f",
    },
    "planner": {
        "push_count": "i",
        "push_distance": "f",
        "zeta_threshold": "f",
        "targets": "i",
        "max_actions": "i",
    },
    "run": {
        "policy": "s",
        "out_dir": "s",
    },
}

# Distribution keys that only make sense for a particular shape.
_SHAPE_KEYS = {
    "disc": {"radius"},
    "rect": {"width", "height"},
    "annulus": {"inner", "outer"},
    "points_file": {"path"},
}
_SHAPE_COMMON = {"shape", "count", "center"}


def _line_of(lines, section: str, key: Optional[str] = None) -> int:
    """1-based line of a section header or of a key inside that section."""
    current = None
    for i, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if key is None and current == section:
                return i
        elif key is not None and current == section and stripped:
            if stripped[0] in "#;":
                continue
            head = re.split(r"[=:]", stripped, maxsplit=1)[0].strip()
            if head == key:
                return i
    return 0


def _numbers(text: str, n: int):
    parts = text.replace(",", " ").split()
    if len(parts) != n:
        raise ValueError(f"expected {n} numbers, got {len(parts)}")
    return [float(p) for p in parts]


def _convert(kind: str, text: str):
    if kind == "f":
        return float(text)
    if kind == "i":
        return int(text)
    if kind == "p":
        return Point2(*_numbers(text, 2))
    if kind == "r":
        return Rect(*_numbers(text, 4))
    return text.strip()


def _read_file(path: Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None
    )
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ScenarioError(path, 0, f"cannot read scenario: {exc}") from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else 0
        raise ScenarioError(path, line, "syntax error") from exc
    except configparser.Error as exc:
        line = getattr(exc, "lineno", 0) or 0
        raise ScenarioError(path, line, exc.message) from exc
    return parser


def load_scenario(
    path,
    seed: Optional[int] = None,
    policy: Optional[str] = None,
) -> Scenario:
    """Parse and validate a scenario file.

    `seed` and `policy` override the file's values (CLI flags).
    Raises ScenarioError with a line-precise message on any problem.
    """
    path = Path(path)
    parser = _read_file(path)
    lines = path.read_text(encoding="utf-8").splitlines()

    def fail(section, key, message) -> ScenarioError:
        return ScenarioError(path, _line_of(lines, section, key), message)

    values: dict = {}
    for section in parser.sections():
        schema = _SCHEMA.get(section)
        if schema is None:
            raise fail(section, None, f"unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            kind = schema.get(key)
            if kind is None:
                raise fail(section, key, f"unknown key '{key}' in [{section}]")
            try:
                values[section][key] = _convert(kind, raw)
            except (ValueError, TypeError) as exc:
                raise fail(section, key, f"bad value for '{key}': {exc}") from exc

    if "distribution" not in values:
        raise ScenarioError(path, 0, "missing required [distribution] section")

    world_kw = dict(values.get("world", {}))
    if seed is not None:
        world_kw["seed"] = int(seed)
    rename = {"crossbar": "crossbar_length", "stem": "stem_length", "seed": "rng_seed"}
    world_kw = {rename.get(k, k): v for k, v in world_kw.items()}
    try:
        world = WorldConfig(**world_kw)
    except ValueError as exc:
        raise fail("world", None, str(exc)) from exc

    dist = dict(values["distribution"])
    shape = dist.get("shape")
    if shape not in _SHAPE_KEYS:
        raise fail(
            "distribution",
            "shape" if "shape" in dist else None,
            f"shape must be one of {sorted(_SHAPE_KEYS)}",
        )
    allowed = _SHAPE_COMMON | _SHAPE_KEYS[shape]
    for key in dist:
        if key not in allowed:
            raise fail("distribution", key, f"key '{key}' does not apply to shape '{shape}'")
    missing = _SHAPE_KEYS[shape] - set(dist)
    if missing:
        raise fail("distribution", None, f"shape '{shape}' needs keys {sorted(missing)}")
    if shape == "disc":
        extent = (dist["radius"],)
    elif shape == "rect":
        extent = (dist["width"], dist["height"])
    elif shape == "annulus":
        extent = (dist["inner"], dist["outer"])
    else:
        extent = ()
    spec_kw = {"shape": shape, "extent": extent}
    if "count" in dist:
        spec_kw["count"] = dist["count"]
    if "center" in dist:
        spec_kw["center"] = dist["center"]
    if shape == "points_file":
        raw_path = Path(dist["path"])
        if not raw_path.is_absolute():
            raw_path = path.parent / raw_path
        spec_kw["path"] = str(raw_path)
    try:
        distribution = DistributionSpec(**spec_kw)
    except ValueError as exc:
        raise fail("distribution", None, str(exc)) from exc

    try:
        metrics = MetricsConfig(**values.get("metrics", {}))
    except (ValueError, TypeError) as exc:
        raise fail("metrics", None, str(exc)) from exc

    mpc_kw = dict(values.get("mpc", {}))
    mpc_kw = {("penalty_weight" if k == "penalty" else k): v for k, v in mpc_kw.items()}
    try:
        mpc = MpcConfig(**mpc_kw)
    except ValueError as exc:
        raise fail("mpc", None, str(exc)) from exc

    planner_kw = dict(values.get("planner", {}))
    planner_kw = {("target_count" if k == "targets" else k): v for k, v in planner_kw.items()}
    try:
        thresholds = PlannerThresholds(
            tool_segment_length=world.crossbar_length, **planner_kw
        )
    except (ValueError, TypeError) as exc:
        raise fail("planner", None, str(exc)) from exc

    run_kw = values.get("run", {})
    chosen_policy = policy if policy is not None else run_kw.get("policy", "herding")
    if chosen_policy == "direct-push":
        chosen_policy = "direct"
    if chosen_policy not in POLICIES:
        raise fail("run", "policy", f"policy must be one of {POLICIES}")

    return Scenario(
        name=path.stem,
        world=world,
        distribution=distribution,
        metrics=metrics,
        mpc=mpc,
        thresholds=thresholds,
        policy=chosen_policy,
        out_dir=run_kw.get("out_dir"),
    )


def bundled_scenarios() -> dict:
    """Name -> path for the .scn files shipped inside the package."""
    found = {}
    root = resources.files("herdplan").joinpath("data/scenarios")
    for entry in root.iterdir():
        if entry.name.endswith(".scn"):
            found[entry.name[:-4]] = str(entry)
    return found


def resolve_scenario(name_or_path: str) -> str:
    """Accept either a filesystem path or a bundled scenario name."""
    p = Path(name_or_path)
    if p.is_file():
        return str(p)
    bundled = bundled_scenarios()
    if name_or_path in bundled:
        return bundled[name_or_path]
    known = ", ".join(sorted(bundled))
    raise ScenarioError(
        name_or_path, 0, f"no such scenario file or bundled name (bundled: {known})"
    )
