"""Command-line entry point: ``dgrec {run,ablate,synth,validate-config,privacy-budget}``.

Every experiment config key is also a flag (``--n-users 30``, ``--no-pearson``)
and overrides the value from ``--config``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from .data import DataError, write_tsv
from .experiment import ABLATIONS, ConfigError, ExperimentConfig, ablation, load_dataset, run_experiment
from .privacy import compose_to_dp, rdp_epsilon

EXIT_CONFIG, EXIT_DATA = 2, 1


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    g = p.add_argument_group("config keys (override the file)")
    for f in fields(ExperimentConfig):
        names = sorted({"--" + f.name.replace("_", "-"), "--" + f.name})
        kw = {"dest": f.name, "default": None}
        if f.type in (bool, "bool"):
            # a bare flag means true; an explicit value may follow
            kw.update(nargs="?", const="true", metavar="BOOL")
        elif f.name == "log_base":
            kw.update(choices=["e", "10"])
        else:
            kw.update(metavar=f.name.upper())
        g.add_argument(*names, **kw)


def resolve_config(args) -> ExperimentConfig:
    """File values, then flag overrides; every problem is reported at once."""
    raw = ExperimentConfig.from_toml(args.config).to_dict() if args.config else {}
    for f in fields(ExperimentConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            raw[f.name] = val
    return ExperimentConfig.from_dict(raw).validate()


def _summary_line(res) -> str:
    s = res.summary
    k = s["config"]["k"]
    return (
        f"rounds={s['rounds']} recall@{k}={s[f'final_recall@{k}']:.4f} "
        f"ndcg@{k}={s[f'final_ndcg@{k}']:.4f} random_recall@{k}={s[f'random_recall@{k}']:.4f} "
        f"mean_bpr={s['final_mean_bpr']:.4f} max_epsilon={s['max_cumulative_epsilon']:.4f} "
        f"total_bits={s['total_bits']}"
    )


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    res = run_experiment(cfg, args.out_dir)
    print(_summary_line(res))
    if args.out_dir:
        print(f"reports written to {args.out_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    res = ablation(cfg, args.variant, args.out_dir)
    print(f"variant={args.variant} " + _summary_line(res))
    return 0


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    if not args.out_dir:
        raise ConfigError(["synth needs --out-dir"])
    if cfg.dataset is not None:
        raise ConfigError(["synth generates data; do not pass --dataset"])
    ds = load_dataset(cfg)
    write_tsv(ds, args.out_dir)
    print(json.dumps(ds.summary()))
    return 0


def cmd_validate(args) -> int:
    cfg = resolve_config(args)
    print(json.dumps(cfg.to_dict(), indent=2))
    return 0


def cmd_privacy_budget(args) -> int:
    bases = [args.log_base] if args.log_base else ["e", "10"]
    out = {}
    for base in bases:
        eps = rdp_epsilon(args.n_s, args.delta, args.beta, base)
        line = f"log_base={base} alpha=1.5 n_s={args.n_s} delta={args.delta} beta={args.beta} epsilon={eps:.4f}"
        entry = {"epsilon": eps}
        if args.rounds is not None:
            dp = compose_to_dp(eps, args.rounds, args.gamma, base)
            line += f" rounds={args.rounds} gamma={args.gamma} dp_epsilon={dp:.4f}"
            entry["dp_epsilon"] = dp
        out[base] = entry
        if not args.json:
            print(line)
    if args.json:
        print(json.dumps(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgrec", description="Decentralized private recommendation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate, writing reports")
    p.add_argument("--out-dir")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run with one component swapped out")
    p.add_argument("variant", choices=ABLATIONS)
    p.add_argument("--out-dir")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic dataset as TSV files")
    p.add_argument("--out-dir")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate-config", help="check a config and print the resolved values")
    _add_config_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("privacy-budget", help="closed-form RDP budget and its DP conversion")
    p.add_argument("--n-s", "--n_s", dest="n_s", type=int, default=1)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--log-base", choices=["e", "10"], help="default: print both")
    p.add_argument("--rounds", type=int, help="compose over this many rounds and convert to DP")
    p.add_argument("--gamma", type=float, default=1e-5)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_privacy_budget)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
