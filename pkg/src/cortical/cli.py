"""``cortical`` command-line front end.

Exit codes: 0 success, 1 other library error, 2 bad configuration,
3 I/O failure, 4 solver instability, 5 homogenization verdict failed.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path

from . import __version__
from .config import COMMANDS, ExperimentConfig, parse_config
from .errors import ConfigError, CorticalError, ImageIOError, InstabilityError
from .green import anisotropy_ratio, green, level_lines
from .homogenization import h_convergence_experiment
from .imaging import RgbImage, load_image, make_test_image, reconstruct_bands, save_image
from .io import (
    atomic_write_text,
    write_contours_csv,
    write_field_csv,
    write_field_png16,
    write_orientation_csv,
    write_orientation_png,
    write_trace_csv,
)
from .operators import forward_output
from .solver import reconstruct

log = logging.getLogger("cortical")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_IO, EXIT_UNSTABLE, EXIT_VALIDATION = 0, 1, 2, 3, 4, 5
BANDS = "RGB"


class _Run:
    """Collects outputs and run facts for the manifest."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = cfg.out_dir
        self.facts: dict[str, str] = {}
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name


def _stimulus(cfg: ExperimentConfig) -> RgbImage:
    if cfg.input is not None:
        return load_image(cfg.input)
    params = {k: v for k, v in cfg.image.items() if k not in ("kind", "clip", "bit_depth")}
    kind = cfg.image.get("kind", "smooth")
    try:
        typed = {
            k: int(v) if k in ("band_height", "n_patches", "square") else float(Fraction(v.strip()))
            for k, v in params.items()
        }
        return make_test_image(kind, cfg.geometry, cfg.seed, **typed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [image] parameters for {kind!r}: {exc}") from exc


def _write_bands(run: _Run, img: RgbImage, stem: str) -> None:
    if img.is_gray():
        write_field_csv(img.bands[0], run.path(f"{stem}.csv"))
    else:
        for name, band in zip(BANDS, img.bands):
            write_field_csv(band, run.path(f"{stem}_{name}.csv"))


def _clip(cfg: ExperimentConfig) -> bool:
    return cfg.image.get("clip", "true").strip().lower() in ("1", "true", "yes", "on")


def cmd_differentiate(run: _Run) -> int:
    cfg = run.cfg
    img = _stimulus(cfg)
    op = cfg.operator.build(img.geometry)
    out = RgbImage(img.geometry, tuple(forward_output(op, b, cfg.gaussian) for b in img.bands))
    save_image(img, run.path("stimulus.png"))
    save_image(out, run.path("differentiated.png"), clip=False)
    _write_bands(run, out, "differentiated")
    write_orientation_png(op.theta, run.path("orientation.png"))
    return EXIT_OK


def cmd_reconstruct(run: _Run) -> int:
    cfg = run.cfg
    img = _stimulus(cfg)
    op = cfg.operator.build(img.geometry)
    solver = cfg.solver.resolve(op)
    run.facts["dt"] = repr(solver.dt)
    run.facts["tolerance"] = repr(solver.tolerance)
    if img.is_gray():
        reports = [reconstruct(op, img.bands[0], cfg.gaussian, solver)] * 3
    else:
        reports = reconstruct_bands(op, img, cfg.gaussian, solver)
    out = RgbImage(img.geometry, tuple(r.solution for r in reports))
    for name, rep in zip(BANDS, reports):
        run.facts[f"iterations_{name}"] = str(rep.iterations)
        run.facts[f"converged_{name}"] = str(rep.converged).lower()
        run.facts[f"final_update_sum_{name}"] = repr(rep.final_update_sum)
    save_image(img, run.path("stimulus.png"))
    save_image(out, run.path("reconstructed.png"), clip=_clip(cfg))
    _write_bands(run, out, "reconstructed")
    write_orientation_png(op.theta, run.path("orientation.png"))
    traces = zip(BANDS[:1], reports[:1]) if img.is_gray() else zip(BANDS, reports)
    for name, rep in traces:
        if rep.energy_trace is not None:
            write_trace_csv(rep.energy_trace, run.path(f"energy_{name}.csv"))
        if rep.update_trace is not None:
            write_trace_csv(rep.update_trace, run.path(f"updates_{name}.csv"), start=1)
    print(f"reconstructed {img.geometry.width}x{img.geometry.height}: "
          + ", ".join(f"{n} {r.iterations} iterations" for n, r in zip(BANDS, reports)))
    return EXIT_OK


def cmd_green(run: _Run) -> int:
    cfg = run.cfg
    g = cfg.geometry
    op = cfg.operator.build(g)
    source = cfg.green_source or (g.width // 2, g.height // 2)
    solver = cfg.solver.resolve(op)
    run.facts["dt"] = repr(solver.dt)
    run.facts["tolerance"] = repr(solver.tolerance)
    gf = green(op, source, solver)
    run.facts["iterations"] = str(gf.iterations)
    run.facts["converged"] = str(gf.converged).lower()
    try:
        ratio = anisotropy_ratio(gf, cfg.level_fraction)
    except CorticalError as exc:
        log.warning("anisotropy ratio unavailable: %s", exc)
        ratio = float("nan")
    run.facts["anisotropy_ratio"] = repr(ratio)
    write_field_csv(gf.field, run.path("green.csv"))
    write_field_png16(gf.field, run.path("green.png"))
    write_contours_csv(level_lines(gf.field, cfg.n_levels), run.path("contours.csv"))
    write_orientation_png(op.theta, run.path("orientation.png"))
    atomic_write_text(
        run.path("summary.txt"),
        f"operator: {gf.operator_digest}\nsource: {source[0]},{source[1]}\n"
        f"iterations: {gf.iterations}\nanisotropy_ratio: {ratio!r}\n",
    )
    print(f"green function at {source}: {gf.iterations} iterations, anisotropy ratio {ratio:.4f}")
    return EXIT_OK


def _verdict(cfg: ExperimentConfig, report) -> tuple[bool, list[str]]:
    h = cfg.homogenize
    lines = []
    ok = True
    if h.expected_a0 is not None:
        rel = abs(report.fitted_coefficient - h.expected_a0) / h.expected_a0
        good = rel <= h.a0_tolerance
        ok &= good
        lines.append(f"a0 within {h.a0_tolerance:g} of {h.expected_a0:g}: {'PASS' if good else 'FAIL'} ({rel:.4f})")
    errs = report.l2_errors
    mono = all(b <= a * (1 + h.monotone_slack) for a, b in zip(errs, errs[1:]))
    ok &= mono
    lines.append(f"l2 errors non-increasing (slack {h.monotone_slack:g}): {'PASS' if mono else 'FAIL'}")
    dev = abs(report.anisotropy_estimate - 1.0)
    iso = dev <= h.anisotropy_tolerance
    ok &= iso
    lines.append(f"anisotropy within {h.anisotropy_tolerance:g} of 1: {'PASS' if iso else 'FAIL'} ({dev:.4f})")
    return ok, lines


def cmd_homogenize(run: _Run) -> int:
    cfg = run.cfg
    h = cfg.homogenize
    report = h_convergence_experiment(
        h.r, h.delta, h.f, h.epsilon_values(), cfg.homogenize_seeds(), workers=len(h.epsilons)
    )
    ok, lines = _verdict(cfg, report)
    atomic_write_text(run.path("homogenization.csv"), report.to_csv())
    summary = report.summary() + "\n".join(lines) + f"\nverdict: {'PASS' if ok else 'FAIL'}\n"
    atomic_write_text(run.path("summary.txt"), summary)
    run.facts["fitted_coefficient"] = repr(report.fitted_coefficient)
    run.facts["anisotropy_estimate"] = repr(report.anisotropy_estimate)
    run.facts["verdict"] = "pass" if ok else "fail"
    print(summary, end="")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_make_map(run: _Run) -> int:
    omap = run.cfg.operator.orientation(run.cfg.geometry)
    write_orientation_csv(omap, run.path("orientation.csv"))
    write_orientation_png(omap, run.path("orientation.png"))
    return EXIT_OK


def cmd_make_test_image(run: _Run) -> int:
    img = _stimulus(run.cfg)
    bit_depth = int(run.cfg.image.get("bit_depth", "8"))
    save_image(img, run.path("test_image.png"), bit_depth=bit_depth)
    return EXIT_OK


HANDLERS = {
    "differentiate": cmd_differentiate,
    "reconstruct": cmd_reconstruct,
    "green": cmd_green,
    "homogenize": cmd_homogenize,
    "make-map": cmd_make_map,
    "make-test-image": cmd_make_test_image,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment and write its manifest; returns the exit status."""
    r = _Run(cfg)
    start = time.perf_counter()
    status = HANDLERS[cfg.command](r)
    elapsed = time.perf_counter() - start
    lines = [cfg.to_ini(), "[run]", f"version = {__version__}", f"status = {status}",
             f"wall_clock_seconds = {elapsed:.3f}"]
    lines += [f"{k} = {v}" for k, v in r.facts.items()]
    lines.append(f"outputs = {','.join(r.outputs)}")
    atomic_write_text(cfg.out_dir / "manifest.txt", "\n".join(lines) + "\n")
    return status


_HELP = {
    "differentiate": "apply the smoothed operator to a stimulus",
    "reconstruct": "recover each image band from the operator response",
    "green": "Neumann Green function and its level-set anisotropy",
    "homogenize": "random-conductance convergence experiment with a pass/fail verdict",
    "make-map": "write an orientation map as CSV and PNG",
    "make-test-image": "write a synthetic stimulus",
    "run": "take the command from the config",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cortical", description="Heterogeneous cortical-operator experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("run",):
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", type=Path, help="INI experiment config (or a previous manifest)")
        sp.add_argument("--seed", type=int, help="override every seed of the experiment")
        sp.add_argument("--out-dir", type=Path, help="directory for outputs and the manifest")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config entry; repeatable")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(text: str, overrides: list[str]) -> str:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not (sep and dot and section and option):
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][option] = value.strip()
    lines = []
    for s in parser.sections():
        lines.append(f"[{s}]")
        lines += [f"{k} = {v}" for k, v in parser[s].items()]
    return "\n".join(lines) + "\n"


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    command = None if args.command == "run" else args.command
    try:
        text, base = "", None
        if args.config is not None:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
            base = args.config.parent.resolve()
        if args.set:
            text = _apply_overrides(text, args.set)
        if command is None and args.config is None:
            raise ConfigError("'run' needs --config")
        cfg = parse_config(text, base, command)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out_dir is not None:
            cfg.out_dir = args.out_dir
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ImageIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InstabilityError as exc:
        print(f"instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (CorticalError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
