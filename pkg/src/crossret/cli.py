"""Command-line entry point: ``crossret synth|run|report|validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfg
from .errors import CrossRetError, ConfigError, MissingRunArtifacts
from .panel import load_panel, validate_panel, write_panel
from .pipeline import run_experiment
from .report import cumulative_series, load_run, render_table, write_csv, write_run
from .synth import SynthConfig, generate_panel

log = logging.getLogger("crossret")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _say(msg: str = "", err: bool = False) -> None:
    stream = sys.stderr if err else sys.stdout
    stream.write(msg + "\n")
    stream.flush()


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def cmd_synth(args) -> int:
    doc = cfg.load_json(args.config) if args.config else {}
    if "models" in doc:
        doc = {"synth": doc.get("synth", {}), "out": doc.get("out")}
        doc = {k: v for k, v in doc.items() if v is not None}
    cfg.validate(doc, cfg.SYNTH_CMD_SCHEMA)
    params = dict(doc.get("synth", {}))
    if args.seed is not None:
        params["seed"] = args.seed
    out = args.out or doc.get("out")
    if not out:
        raise ConfigError("/out", "no output path (use --out)")
    config = SynthConfig(**params)
    panel = generate_panel(config)
    out = Path(out)
    try:
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True)
        write_panel(panel, out)
    except OSError as e:
        raise CrossRetError(f"cannot write {out}: {e.strerror or e}") from None
    _say(f"wrote {out} ({panel.n_months} months x {panel.n_stocks} stocks)")
    return EXIT_OK


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("", "run needs --config")
    path = Path(args.config)
    doc = cfg.load_json(path)
    rc = cfg.resolve(doc, base_dir=path.parent, seed=args.seed, threads=args.threads)
    out = args.out or doc.get("out")
    if not out:
        raise ConfigError("/out", "no output directory (use --out or set out)")
    if rc.synth is not None:
        panel = generate_panel(rc.synth)
    else:
        if not rc.panel_path.is_file():
            raise ConfigError("/panel", f"panel file not found: {rc.panel_path}")
        panel = load_panel(rc.panel_path)

    _say(f"running {len(rc.configs)} pattern(s) on {panel.n_stocks} stocks x "
         f"{panel.n_months} months, threads={rc.threads}")
    reports = run_experiment(panel, rc.configs, threads=rc.threads)
    write_run(Path(out), reports, rc.resolved)
    for r in reports:
        if r.ok:
            s = r.summary
            _say(f"  {r.name}: CORR {s.corr:.4f}  DirQ {100 * s.direction['quintile'].fraction:.2f}%")
        else:
            _say(f"  {r.name}: FAILED {r.error}", err=True)
    _say(f"wrote {out}")
    return EXIT_OK if all(r.ok for r in reports) else EXIT_FAILED


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    doc = load_run(run_dir)
    out = Path(args.out) if args.out else run_dir / "report"
    (out / "figures").mkdir(parents=True, exist_ok=True)
    table = render_table(doc)
    (out / "report.txt").write_text(table)
    series = cumulative_series(doc)
    write_csv(out / "cumulative_ls.csv", ["month", "model", "bucket", "ls_return", "cumulative"],
              series)
    from . import plotting  # matplotlib is only needed here

    for bucket in ("tertile", "quintile"):
        plotting.plot_cumulative(series, bucket, out / "figures" / f"cumulative_{bucket}.png")
    plotting.plot_corr(doc, out / "figures" / "corr_monthly.png")
    plotting.plot_summary_bars(doc, out / "figures" / "corr_summary.png")
    _say(table.rstrip("\n"))
    return EXIT_OK


def cmd_validate(args) -> int:
    panel = load_panel(args.panel)
    rep = validate_panel(panel, floor=args.floor)
    _say(json.dumps(rep.to_dict(), indent=2))
    for w in rep.warnings:
        _say(f"warning: {w}", err=True)
    return EXIT_OK if rep.ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossret", description="Walk-forward cross-sectional return backtests.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic factor panel CSV")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--seed", type=_u64)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="run a walk-forward experiment")
    r.add_argument("--config")
    r.add_argument("--out")
    r.add_argument("--seed", type=_u64)
    r.add_argument("--threads", type=_positive)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("report", help="render tables, series and figures for a run")
    t.add_argument("run_dir")
    t.add_argument("--out")
    t.set_defaults(func=cmd_report)

    v = sub.add_parser("validate", help="check a panel CSV")
    v.add_argument("panel")
    v.add_argument("--floor", type=int, default=30)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        _say(f"config error at {e.pointer or '/'}: {e.message}", err=True)
        return EXIT_USAGE
    except (MissingRunArtifacts, FileNotFoundError) as e:
        _say(f"error: {e}", err=True)
        return EXIT_USAGE
    except CrossRetError as e:
        _say(f"error: {e}", err=True)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
