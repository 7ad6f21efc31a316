"""`varlab` command line.

Exit codes: 0 ok, 1 usage, 2 invalid input, 3 numeric failure (also a failed grad-check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt_mod
from . import config as config_mod
from .data import byte_encode
from .errors import NumericFailure
from .gradcheck import TOLERANCE, grad_check
from .model import ARCHS
from .presets import PRESETS, preset
from .telemetry import DEFAULT_PROMPT, StdRecord, prompt_id, probe_max_activations, record_param_stats, write_csv

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


class _Usage(Exception):
    pass


def _cmd_train(args) -> int:
    from .train import train

    if args.resume:
        if args.config or args.set:
            raise _Usage("--resume takes its config from the checkpoint; drop --config/--set")
        res = train(resume=args.resume, out_dir=args.out, stop_at_tokens=args.stop_at_tokens)
    else:
        if not args.config:
            raise _Usage("train needs --config F or --resume CKPT")
        cfg = config_mod.load(args.config)
        overrides = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise _Usage(f"--set expects KEY=VALUE, got {item!r}")
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["train.seed"] = args.seed
        if overrides:
            cfg = cfg.replace(**overrides)
        res = train(cfg, out_dir=args.out, stop_at_tokens=args.stop_at_tokens)
    state = "paused" if res.paused else "done"
    loss = "n/a" if res.final_loss is None else f"{res.final_loss:.4f}"
    print(f"{state}: tokens={res.tokens_seen} steps={res.steps} loss={loss} checkpoint={res.checkpoint}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    ok = True
    for arch in args.arch or ARCHS:
        report = grad_check(arch, seed=args.seed, coords=args.coords, corrupt=args.corrupt)
        for role, err in report.per_role.items():
            print(f"{arch:12s} {role:16s} max_rel_err={err:.3e}")
        verdict = "ok" if report.ok else "FAIL"
        print(f"{arch:12s} {'all':16s} max_rel_err={report.max_rel_error:.3e} threshold={TOLERANCE:.0e} {verdict}")
        ok &= report.ok
    return EXIT_OK if ok else EXIT_NUMERIC


def _cmd_probe(args) -> int:
    ck = ckpt_mod.load(args.ckpt)
    if ck.config.model.vocab_size < 256:
        raise ValueError("probe encodes the prompt as bytes and needs vocab_size >= 256")
    tokens = byte_encode(args.prompt).ids
    rows = probe_max_activations(ck.model, tokens, prompt_id(args.prompt))
    write_csv(rows, sys.stdout if args.out == "-" else args.out)
    return EXIT_OK


def _cmd_stats(args) -> int:
    rows: list[StdRecord] = []
    for path in args.ckpt:
        ck = ckpt_mod.load(path)
        rows += record_param_stats(ck.model, ck.trainer.tokens_seen, phase="checkpoint")
    write_csv(rows, sys.stdout if args.out == "-" else args.out, record_type=StdRecord)
    return EXIT_OK


def _cmd_preset(args) -> int:
    if args.name not in PRESETS:
        raise _Usage(f"unknown preset {args.name!r}; available: {', '.join(PRESETS)}")
    variants = preset(args.name)
    if args.emit:
        out = Path(args.emit)
        out.mkdir(parents=True, exist_ok=True)
        for variant, cfg in variants.items():
            config_mod.save(cfg, out / f"{variant}.cfg")
            print(out / f"{variant}.cfg")
    else:
        for variant, cfg in variants.items():
            print(f"# variant: {variant}")
            print(config_mod.dumps(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="varlab", description="Desk-scale transformer pre-training with weight-variance control.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a config or resume a checkpoint")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default: train.out_dir)")
    t.add_argument("--resume", metavar="CKPT")
    t.add_argument("--stop-at-tokens", type=int, metavar="N", help="pause with a checkpoint once N tokens are seen")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(fn=_cmd_train)

    g = sub.add_parser("grad-check", help="finite-difference check of the backward pass")
    g.add_argument("--arch", action="append", choices=ARCHS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--coords", type=int, default=100, help="sampled coordinates per parameter role")
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(fn=_cmd_grad_check)

    r = sub.add_parser("probe", help="per-layer max |activation| on a prompt")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--prompt", default=DEFAULT_PROMPT)
    r.add_argument("--out", default="activations.csv", help="CSV path, or - for stdout")
    r.set_defaults(fn=_cmd_probe)

    s = sub.add_parser("stats", help="parameter mean/std table for checkpoints")
    s.add_argument("ckpt", nargs="+")
    s.add_argument("--out", default="std.csv", help="CSV path, or - for stdout")
    s.set_defaults(fn=_cmd_stats)

    e = sub.add_parser("preset", help=f"print or emit a named preset ({', '.join(PRESETS)})")
    e.add_argument("name")
    e.add_argument("--emit", metavar="DIR", help="write one <variant>.cfg per variant")
    e.set_defaults(fn=_cmd_preset)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except _Usage as exc:
        print(f"varlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"varlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"varlab: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
