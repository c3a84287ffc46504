"""INI experiment configuration shared by the CLI and its manifests.

A manifest is a config with an extra ``[run]`` section; loading ignores that
section, so any manifest can be fed back to reproduce its run.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError
from .grid import GridGeometry
from .operators import GaussianParams, HeterogeneousOperator, OperatorSpec
from .solver import DEFAULT_TOLERANCE, SolverConfig, default_dt, scaled_tolerance, stable_dt

COMMANDS = ("differentiate", "reconstruct", "green", "homogenize", "make-map", "make-test-image")
REFERENCE_NODES = 256 * 256


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _number(text: str) -> float:
    """Floats or fractions such as ``1/64``."""
    return float(Fraction(text.strip())) if "/" in text else float(text)


@dataclass
class SolverSettings:
    dt: str = "default"  # "default", "stable" or a number
    tolerance: str = "auto"  # "auto" or a number
    max_iterations: int = 2_000_000
    boundary: str = "neumann"
    record_energy: bool = False
    record_updates: bool = False

    def resolve(self, op: HeterogeneousOperator) -> SolverConfig:
        """Concrete solver settings for ``op``.

        The automatic tolerance is the library default scaled by
        ``nodes / 256^2``; with a non-default step it is further scaled by
        ``dt / default_dt`` so the run stops at the same residual.
        """
        base = default_dt(op)
        if self.dt == "default":
            dt = base
        elif self.dt == "stable":
            dt = stable_dt(op)
        else:
            dt = float(self.dt)
        if self.tolerance == "auto":
            tol = DEFAULT_TOLERANCE * op.geometry.size / REFERENCE_NODES
            if self.dt == "stable":
                tol = scaled_tolerance(dt, base, tol)
        else:
            tol = float(self.tolerance)
        return SolverConfig(dt, tol, self.max_iterations, self.boundary, self.record_energy, self.record_updates)


@dataclass
class HomogenizeSettings:
    r: float = 0.5
    delta: float = 0.1
    f: str = "modes"
    epsilons: tuple[str, ...] = ("1/16", "1/32", "1/64")
    seeds: tuple[int, ...] | None = None  # None: seed, seed+1, ...
    expected_a0: float | None = None
    a0_tolerance: float = 0.02
    anisotropy_tolerance: float = 0.1
    monotone_slack: float = 0.1

    def epsilon_values(self) -> list[float]:
        return [_number(e) for e in self.epsilons]


@dataclass
class ExperimentConfig:
    command: str
    seed: int = 0
    out_dir: Path = Path("out")
    input: Path | None = None
    geometry: GridGeometry = field(default_factory=lambda: GridGeometry(64, 64))
    operator: OperatorSpec = field(default_factory=OperatorSpec)
    gaussian: GaussianParams = field(default_factory=GaussianParams)
    solver: SolverSettings = field(default_factory=SolverSettings)
    image: dict[str, str] = field(default_factory=dict)
    green_source: tuple[int, int] | None = None
    level_fraction: float = 0.5
    n_levels: int = 8
    homogenize: HomogenizeSettings = field(default_factory=HomogenizeSettings)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Every seed of the run derives from ``seed`` afterwards."""
        return replace(
            self,
            seed=int(seed),
            operator=replace(self.operator, seed=int(seed)),
            homogenize=replace(self.homogenize, seeds=None),
        )

    def homogenize_seeds(self) -> list[int]:
        h = self.homogenize
        n = len(h.epsilons)
        return list(h.seeds) if h.seeds is not None else [self.seed + k for k in range(n)]

    def to_ini(self) -> str:
        """Resolved configuration in a fixed section and key order."""
        h = self.homogenize
        sections = {
            "experiment": {
                "command": self.command,
                "seed": str(self.seed),
                "out_dir": str(self.out_dir),
                "input": "" if self.input is None else str(self.input),
            },
            "grid": {
                "width": str(self.geometry.width),
                "height": str(self.geometry.height),
                "spacing": repr(self.geometry.spacing),
            },
            "operator": self.operator.to_dict(),
            "gaussian": {
                "sigma": repr(self.gaussian.sigma),
                "truncation_radius": repr(self.gaussian.truncation_radius),
            },
            "solver": {
                "dt": self.solver.dt,
                "tolerance": self.solver.tolerance,
                "max_iterations": str(self.solver.max_iterations),
                "boundary": self.solver.boundary,
                "record_energy": str(self.solver.record_energy).lower(),
                "record_updates": str(self.solver.record_updates).lower(),
            },
            "image": dict(sorted(self.image.items())),
            "green": {
                "source": "" if self.green_source is None else f"{self.green_source[0]},{self.green_source[1]}",
                "level_fraction": repr(self.level_fraction),
                "n_levels": str(self.n_levels),
            },
            "homogenize": {
                "r": repr(h.r),
                "delta": repr(h.delta),
                "f": h.f,
                "epsilons": ",".join(h.epsilons),
                "seeds": ",".join(str(s) for s in self.homogenize_seeds()),
                "expected_a0": "" if h.expected_a0 is None else repr(h.expected_a0),
                "a0_tolerance": repr(h.a0_tolerance),
                "anisotropy_tolerance": repr(h.anisotropy_tolerance),
                "monotone_slack": repr(h.monotone_slack),
            },
        }
        lines = []
        for name, entries in sections.items():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in entries.items()]
            lines.append("")
        return "\n".join(lines)


def _section(parser: configparser.ConfigParser, name: str) -> dict[str, str]:
    return dict(parser[name]) if parser.has_section(name) else {}


def parse_config(text: str, base_dir: Path | None = None, command: str | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text.

    ``command`` overrides the ``[experiment] command`` key. Relative input
    paths resolve against ``base_dir``.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    known = {"experiment", "grid", "operator", "gaussian", "solver", "image", "green", "homogenize", "run"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        return _build(parser, base_dir, command)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def _build(parser, base_dir, command) -> ExperimentConfig:
    exp = _section(parser, "experiment")
    command = command or exp.get("command", "").strip()
    if not command:
        raise ConfigError("no command given")
    seed = int(exp.get("seed", "0"))
    inp = exp.get("input", "").strip()
    input_path = None
    if inp:
        input_path = Path(inp)
        if not input_path.is_absolute() and base_dir is not None:
            input_path = (base_dir / input_path).resolve()

    grid = _section(parser, "grid")
    geometry = GridGeometry(
        int(grid.get("width", "64")), int(grid.get("height", "64")), _number(grid.get("spacing", "1.0"))
    )
    op_keys = _section(parser, "operator")
    op_keys.setdefault("seed", str(seed))
    operator = OperatorSpec.from_dict(op_keys)

    gs = _section(parser, "gaussian")
    gaussian = GaussianParams(_number(gs.get("sigma", "1.0")), _number(gs.get("truncation_radius", "4.0")))

    sv = _section(parser, "solver")
    dt = sv.get("dt", "default").strip()
    if dt not in ("default", "stable") and not _number(dt) > 0:
        raise ConfigError(f"solver dt must be positive, 'default' or 'stable', got {dt!r}")
    tol = sv.get("tolerance", "auto").strip()
    if tol != "auto" and not _number(tol) > 0:
        raise ConfigError(f"solver tolerance must be positive or 'auto', got {tol!r}")
    solver = SolverSettings(
        dt=dt,
        tolerance=tol,
        max_iterations=int(sv.get("max_iterations", "2000000")),
        boundary=sv.get("boundary", "neumann").strip(),
        record_energy=_bool(sv.get("record_energy", "false")),
        record_updates=_bool(sv.get("record_updates", "false")),
    )
    SolverConfig(1.0, 1.0, solver.max_iterations, solver.boundary)  # range checks

    gr = _section(parser, "green")
    src = gr.get("source", "").strip()
    green_source = tuple(int(v) for v in src.split(",")) if src else None
    if green_source is not None and len(green_source) != 2:
        raise ConfigError("green source must be 'i,j'")

    hs = _section(parser, "homogenize")
    seeds = hs.get("seeds", "").strip()
    exp_a0 = hs.get("expected_a0", "").strip()
    homog = HomogenizeSettings(
        r=_number(hs.get("r", "0.5")),
        delta=_number(hs.get("delta", "0.1")),
        f=hs.get("f", "modes").strip(),
        epsilons=tuple(e.strip() for e in hs.get("epsilons", "1/16,1/32,1/64").split(",")),
        seeds=tuple(int(s) for s in seeds.split(",")) if seeds else None,
        expected_a0=_number(exp_a0) if exp_a0 else None,
        a0_tolerance=_number(hs.get("a0_tolerance", "0.02")),
        anisotropy_tolerance=_number(hs.get("anisotropy_tolerance", "0.1")),
        monotone_slack=_number(hs.get("monotone_slack", "0.1")),
    )
    homog.epsilon_values()

    return ExperimentConfig(
        command=command,
        seed=seed,
        out_dir=Path(exp.get("out_dir", "out").strip() or "out"),
        input=input_path,
        geometry=geometry,
        operator=operator,
        gaussian=gaussian,
        solver=solver,
        image=_section(parser, "image"),
        green_source=green_source,
        level_fraction=_number(gr.get("level_fraction", "0.5")),
        n_levels=int(gr.get("n_levels", "8")),
        homogenize=homog,
    )


def load_config(path, command: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent.resolve(), command)
