"""Command-line front end: ``safegrid run|sweep|compare|validate``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, ScenarioConfig, bundled_path, errors, load_config, validate
from .engine import SimulationError, run
from .io import read_timeseries, write_events, write_json, write_timeseries
from .metrics import format_summary, summarize, uub_estimate

log = logging.getLogger("safegrid")

OUTPUT_ENV = "SAFEGRID_OUTPUT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def resolve_config(spec: str) -> Path:
    """A file path, or the name of a bundled scenario (``case1``, ``case2.cfg``...)."""
    p = Path(spec)
    if p.exists():
        return p
    bundled = bundled_path(p.name.split(".")[0])
    if bundled.exists():
        return bundled
    raise ConfigError(f"no such config file or bundled scenario: {spec}")


def _parse_value(text: str):
    return yaml.safe_load(text)


def load_with_overrides(spec: str, overrides: list[str]) -> tuple[Path, ScenarioConfig]:
    path = resolve_config(spec)
    cfg = load_config(path)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects path=value, got {item!r}")
        cfg = cfg.with_override(key.strip(), _parse_value(value))
    return path, cfg


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "runs")


def execute(cfg: ScenarioConfig, out_dir: Path, config_path: str) -> dict:
    """Run one scenario and write its artifacts. Returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sim = run(cfg)
    elapsed = time.perf_counter() - t0
    summary = summarize(sim, cfg)
    files = {"timeseries": "timeseries.csv", "events": "events.csv", "summary": "summary.txt", "config": "config.yaml"}
    write_timeseries(sim, out_dir / files["timeseries"])
    write_events(sim.events, out_dir / files["events"])
    (out_dir / files["summary"]).write_text(format_summary(summary) + f"wall time: {elapsed:.2f} s\n")
    (out_dir / files["config"]).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    manifest = {
        "config_path": str(config_path),
        "output_dir": str(out_dir),
        "files": sorted(files.values()) + ["manifest.json"],
        "config_digest": cfg.digest(),
        "summary": summary.as_dict(),
        "version": __version__,
    }
    write_json(manifest, out_dir / "manifest.json")
    return manifest


def _report_findings(findings) -> None:
    for f in findings:
        print(str(f), file=sys.stderr if f.level == "error" else sys.stdout)


def cmd_validate(args) -> int:
    _, cfg = load_with_overrides(args.config, args.set)
    findings = validate(cfg)
    _report_findings(findings)
    bad = errors(findings)
    print(f"{cfg.name}: {len(bad)} error(s), {len(findings) - len(bad)} warning(s); digest {cfg.digest()}")
    return EXIT_INVALID if bad else EXIT_OK


def cmd_run(args) -> int:
    path, cfg = load_with_overrides(args.config, args.set)
    findings = validate(cfg)
    _report_findings(findings)
    if errors(findings):
        return EXIT_INVALID
    out = Path(args.out) if args.out else output_root(None) / f"{cfg.name}-{cfg.digest()[:10]}"
    manifest = execute(cfg, out, str(path))
    print((out / "summary.txt").read_text(), end="")
    print(f"wrote {', '.join(manifest['files'])} to {out}")
    return EXIT_OK


def _sweep_one(job):
    cfg_dict, out_dir, config_path = job
    cfg = ScenarioConfig.from_dict(cfg_dict)
    return execute(cfg, Path(out_dir), config_path)["summary"]


def cmd_sweep(args) -> int:
    path, base = load_with_overrides(args.config, args.set)
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    cfgs = [base.with_override(args.param, v) for v in values]
    bad = False
    for v, c in zip(values, cfgs):
        errs = errors(validate(c))
        for f in errs:
            print(f"{args.param}={v}: {f}", file=sys.stderr)
        bad |= bool(errs)
    if bad:
        return EXIT_INVALID
    root = Path(args.out) if args.out else output_root(None) / f"sweep-{base.name}-{args.param}"
    jobs = [(c.to_dict(), str(root / f"{args.param}={v}"), str(path)) for v, c in zip(values, cfgs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_sweep_one, jobs))
    else:
        summaries = [_sweep_one(j) for j in jobs]
    header = f"{args.param},violations,uub_e_f,uub_e_v,settled_e_f,power_sharing_error"
    rows = [header]
    for v, s in zip(values, summaries):
        rows.append(
            f"{v},{s['total_violations']},{s['uub_e_f']['bound']:.9g},{s['uub_e_v']['bound']:.9g},"
            f"{s['uub_e_f']['settled']},{s['power_sharing_error']:.6g}"
        )
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.csv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))
    print(f"wrote {root / 'sweep.csv'}")
    return EXIT_OK


def _log_path(spec: str) -> Path:
    p = Path(spec)
    return p / "timeseries.csv" if p.is_dir() else p


def log_metrics(sim) -> dict[str, float]:
    ef = uub_estimate(sim.time, sim.e_f_norm)
    ev = uub_estimate(sim.time, sim.e_v_norm)
    return {
        "uub_e_f": ef.bound,
        "uub_e_v": ev.bound,
        "max_freq_hz": float(sim["freq_hz"].max()),
        "min_freq_hz": float(sim["freq_hz"].min()),
        "max_volt_v": float(sim["volt_v"].max()),
        "min_volt_v": float(sim["volt_v"].min()),
        "max_lyap_E": float(sim.lyap_E.max()),
        "final_upsilon_f_max": float(sim["upsilon_f"][-1].max()),
        "final_upsilon_v_max": float(sim["upsilon_v"][-1].max()),
    }


def cmd_compare(args) -> int:
    a = log_metrics(read_timeseries(_log_path(args.log_a)))
    b = log_metrics(read_timeseries(_log_path(args.log_b)))
    print(f"{'metric':22s} {'A':>16s} {'B':>16s} {'B - A':>16s}")
    for k in a:
        d = b[k] - a[k]
        print(f"{k:22s} {a[k]:16.9g} {b[k]:16.9g} {d:16.9g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safegrid", description="Safe and resilient microgrid secondary control simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("config", help="YAML scenario file or bundled name (case1, case2)")
        sp.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a config key")

    sp = sub.add_parser("run", help="simulate one scenario")
    config_args(sp)
    sp.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./runs)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    config_args(sp)
    sp.add_argument("--param", required=True, help="dotted config path or alias, e.g. nu_f")
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="metric deltas between two logs")
    sp.add_argument("log_a")
    sp.add_argument("log_b")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("validate", help="check a scenario against the modelling assumptions")
    config_args(sp)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME if not isinstance(exc, FileNotFoundError) else EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
