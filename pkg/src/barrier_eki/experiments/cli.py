"""Command-line entry point ``barrier-eki``.

Subcommands::

    barrier-eki run <preset|config.yaml> [--out DIR] [--desk] [--set KEY=VALUE ...]
    barrier-eki presets
    barrier-eki verify [--only A1,A3] [--out DIR]
    barrier-eki export <record> --format csv|json [--output FILE]

Exit codes: 0 success, 1 run error (abort record written), 2 verification
failure, 64 usage error (unknown flag, bad config key, missing file).
"""

import argparse
import json
import sys
from pathlib import Path

from ..errors import BarrierEKIError, ConfigError
from .acceptance import CHECKS, RunCache, format_table, run_acceptance
from .config import load_config, make_config
from .presets import DESCRIPTIONS, get_preset, preset_names
from .record import TrajectoryRecord
from .runner import run_experiment

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_VERIFY_FAILED = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="barrier-eki", description="Barrier-constrained ensemble Kalman inversion")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a preset or a config file")
    r.add_argument("config", help="preset name or path to a YAML/JSON config")
    r.add_argument("--out", help="output directory (default: runs/<name>)")
    r.add_argument("--desk", action="store_true", help="use the desk-scale preset variant")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. integrator.t_final=100")

    sub.add_parser("presets", help="list the built-in presets")

    v = sub.add_parser("verify", help="run the acceptance suite at desk scale")
    v.add_argument("--only", help="comma-separated criteria, e.g. A1,A5")
    v.add_argument("--out", help="write the artifacts of every run below this directory")

    e = sub.add_parser("export", help="convert a trajectory record")
    e.add_argument("record", help="record.json, record.csv or a run directory")
    e.add_argument("--format", required=True, choices=("csv", "json"))
    e.add_argument("--output", help="write here instead of stdout")
    return p


def _parse_override(item):
    """``a.b.c=value`` -> nested dict; the value is parsed as YAML."""
    import yaml

    if "=" not in item:
        raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    value = yaml.safe_load(raw)
    out = {}
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def _load(args):
    if args.config in preset_names():
        cfg = get_preset(args.config, desk=args.desk)
    else:
        if not Path(args.config).is_file():
            raise UsageError(f"{args.config!r} is neither a preset nor a config file")
        cfg = load_config(args.config)
    for item in args.set:
        cfg = make_config(_parse_override(item), base=cfg)
    return cfg


def _cmd_run(args, out):
    cfg = _load(args)
    outdir = args.out or cfg["output"]["dir"] or str(Path("runs") / cfg["name"])
    res = run_experiment(cfg, outdir=outdir)
    rec = res.record
    stats = rec.meta.get("stats", {})
    print(f"{cfg['name']}: {len(rec)} checkpoints, {res.elapsed:.1f}s, "
          f"accepted steps {stats.get('accepted', '-')}; artifacts in {outdir}", file=out)
    if rec.abort is not None:
        print(f"aborted ({rec.abort['reason']}) at t={rec.abort['t']:.6g}: "
              f"{rec.abort['message']}", file=out)
        return EXIT_RUN_ERROR
    print(f"final V_e {rec.columns['V_e'][-1]:.4g}, margin {rec.columns['margin'][-1]:.4g}, "
          f"err_param {rec.columns['err_param'][-1]:.4g}", file=out)
    return EXIT_OK


def _cmd_presets(args, out):
    for name in preset_names():
        print(f"{name:<20} {DESCRIPTIONS[name]}", file=out)
    return EXIT_OK


def _cmd_verify(args, out):
    names = None
    if args.only:
        names = [n.strip().upper() for n in args.only.split(",") if n.strip()]
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            raise UsageError(f"unknown criteria {unknown}; choose from {list(CHECKS)}")
    results = run_acceptance(names, RunCache(args.out),
                             progress=lambda r: print(r.line(), file=out, flush=True))
    print(format_table(results).splitlines()[-1], file=out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


def _cmd_export(args, out):
    path = Path(args.record)
    if not path.exists():
        raise UsageError(f"no such record: {path}")
    try:
        rec = TrajectoryRecord.read(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read record {path}: {exc}") from None
    text = rec.to_csv() if args.format == "csv" else rec.to_json()
    if args.output:
        Path(args.output).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "presets": _cmd_presets, "verify": _cmd_verify,
             "export": _cmd_export}


def main(argv=None, out=None):
    """Run the CLI and return the exit code."""
    out = out or sys.stdout
    try:
        args = _parser().parse_args(argv)
        return _COMMANDS[args.command](args, out)
    except (UsageError, ConfigError) as exc:
        print(f"barrier-eki: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BarrierEKIError as exc:
        print(f"barrier-eki: error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
