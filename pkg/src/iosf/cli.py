"""Command-line entry point.

Commands: gen-synthetic, run, resume, eval, ablate-scope, ablate-hparam,
report.  Exit codes: 0 ok, 2 config, 3 format, 4 setup, 5 internal.  The
environment variable ``IOSF_SEED`` overrides the config seed (the ``--seed``
flag overrides both).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import RunConfig, parse_config
from .datasets import SyntheticSpec, gen_synthetic
from .errors import ConfigError, EngineError, FormatError, SetupError
from .metrics import emit_report, report_from_row, session_row, summarize
from .trainer import eval_checkpoint, resume_protocol, run_protocol

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_SETUP = 4
EXIT_INTERNAL = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iosf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    common(sub.add_parser("gen-synthetic", help="write a synthetic embedding dataset"))
    common(sub.add_parser("run", help="run the full session protocol"))

    p_resume = sub.add_parser("resume", help="continue a checkpointed run")
    p_resume.add_argument("--resume", required=True, help="checkpoint to resume from")
    p_resume.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="re-evaluate a checkpoint")
    p_eval.add_argument("--resume", required=True, help="checkpoint to evaluate")
    p_eval.add_argument("--out", required=True, help="output directory")

    p_scope = sub.add_parser("ablate-scope", help="compare update scopes")
    common(p_scope)

    p_hp = sub.add_parser("ablate-hparam", help="sweep pair counts or top-K")
    common(p_hp)
    p_hp.add_argument("--param", required=True, choices=("pairs", "top_k"))
    p_hp.add_argument(
        "--values",
        required=True,
        help="comma list; pairs take base/inc items like 20/3,40/3",
    )

    p_report = sub.add_parser("report", help="re-emit csv/plotdata from a JSON report")
    p_report.add_argument("report_json", help="path to report.json")
    p_report.add_argument("--out", required=True, help="output directory")
    return parser


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config)
    env_seed = os.environ.get("IOSF_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"IOSF_SEED must be an integer, got {env_seed!r}") from None
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if cfg.seed < 0:
        raise ConfigError("seed must be >= 0")
    return cfg


def _cmd_gen_synthetic(args) -> int:
    cfg = _load_config(args)
    spec = SyntheticSpec(
        classes=cfg.synth_classes,
        train_per_class=cfg.synth_train_per_class,
        test_per_class=cfg.synth_test_per_class,
        dim=cfg.dim,
        noise=cfg.synth_noise,
        seed=cfg.seed,
        ctx_len=cfg.ctx_len,
    )
    train_dir, test_dir = gen_synthetic(spec, args.out)
    print(f"wrote {train_dir} and {test_dir}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    reports = run_protocol(cfg, args.out)
    summary = summarize([r.accuracy for r in reports], len(reports))
    print(f"run complete: {len(reports)} sessions -> {args.out}")
    print(
        f"AVG {100 * summary.avg:.1f}  PD {100 * summary.pd:.1f}"
        + (f"  NLA {100 * summary.nla:.1f}" if summary.nla is not None else "")
        + (f"  BMA {100 * summary.bma:.1f}" if summary.bma is not None else "")
    )
    return EXIT_OK


def _cmd_resume(args) -> int:
    reports = resume_protocol(args.resume, args.out)
    print(f"resumed through session {reports[-1].session} -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = eval_checkpoint(args.resume)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    row = session_row(report)
    del row["losses"]  # training-time losses cannot be reproduced at eval
    path = out / "eval_report.json"
    path.write_text(json.dumps(row, indent=1) + "\n", encoding="utf-8")
    print(f"evaluated session {report.session} -> {path}")
    return EXIT_OK


def _cmd_ablate_scope(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    lines = ["scope,avg_pct,pd_pct,nla_pct,bma_pct"]
    for scope in ("current_only", "plus_keymap", "all_params"):
        sub_cfg = dataclasses.replace(cfg, update_scope=scope)
        reports = run_protocol(sub_cfg, out / f"scope_{scope}")
        s = summarize([r.accuracy for r in reports], len(reports))
        fmt = lambda x: "" if x is None else f"{100 * x:.1f}"
        lines.append(f"{scope},{fmt(s.avg)},{fmt(s.pd)},{fmt(s.nla)},{fmt(s.bma)}")
    table = out / "ablate_scope.csv"
    table.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    print(f"wrote {table}")
    return EXIT_OK


def _parse_sweep_values(param: str, raw: str) -> list[tuple]:
    values = []
    for item in raw.split(","):
        item = item.strip()
        try:
            if param == "pairs":
                base, inc = item.split("/")
                values.append((int(base), int(inc)))
            else:
                values.append((int(item),))
        except ValueError:
            raise ConfigError(f"bad --values item {item!r} for --param {param}") from None
    if not values:
        raise ConfigError("--values is empty")
    return values


def _cmd_ablate_hparam(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    values = _parse_sweep_values(args.param, args.values)
    header = "pairs_base,pairs_inc" if args.param == "pairs" else "top_k"
    lines = [f"{header},avg_pct,pd_pct,nla_pct,bma_pct"]
    for value in values:
        if args.param == "pairs":
            sub_cfg = dataclasses.replace(cfg, pairs_base=value[0], pairs_inc=value[1])
            tag = f"pairs_{value[0]}_{value[1]}"
            prefix = f"{value[0]},{value[1]}"
        else:
            sub_cfg = dataclasses.replace(cfg, top_k=value[0])
            tag = f"top_k_{value[0]}"
            prefix = f"{value[0]}"
        reports = run_protocol(sub_cfg, out / tag)
        s = summarize([r.accuracy for r in reports], len(reports))
        fmt = lambda x: "" if x is None else f"{100 * x:.1f}"
        lines.append(f"{prefix},{fmt(s.avg)},{fmt(s.pd)},{fmt(s.nla)},{fmt(s.bma)}")
    table = out / f"ablate_{args.param}.csv"
    table.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    print(f"wrote {table}")
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        doc = json.loads(Path(args.report_json).read_text(encoding="utf-8"))
        reports = [report_from_row(row) for row in doc["sessions"]]
        digest = doc.get("config_digest", "")
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"cannot read report {args.report_json}: {exc}") from exc
    out = Path(args.out)
    for fmt in ("json", "csv", "plotdata"):
        emit_report(reports, out / f"report.{fmt}", fmt, digest)
    print(f"re-emitted report for {len(reports)} sessions -> {out}")
    return EXIT_OK


_COMMANDS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "run": _cmd_run,
    "resume": _cmd_resume,
    "eval": _cmd_eval,
    "ablate-scope": _cmd_ablate_scope,
    "ablate-hparam": _cmd_ablate_hparam,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except SetupError as exc:
        print(f"setup error: {exc}", file=sys.stderr)
        return EXIT_SETUP
    except (EngineError, ValueError, IndexError, OSError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
