"""Command-line entry point.

Each subcommand runs one pipeline stage against the output directory
(artifacts from earlier stages are read from there); ``run`` executes the
configured stage sequence in order. Exit codes: 0 success, 1 validation
error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .pipeline import (
    STAGE_ORDER,
    ConfigError,
    PipelineConfig,
    StageError,
    run_pipeline,
)

_STAGE_HELP = {
    "simulate": "generate a simulated cohort with known ground truth",
    "select": "apply the treated/control analysis-sample filter",
    "impute": "chained-equations multiple imputation (PMM)",
    "synth": "train the diffusion generator and sample the twin cohort",
    "audit": "fidelity and privacy metrics of the twins",
    "estimate": "two-learner effect estimation with bootstrap intervals",
    "cate": "conditional effects with cluster-robust inference",
    "qte": "quantile treatment effects with xy-pair bootstrap",
    "sense": "confounding sensitivity and the shadow-wage sweep",
    "report": "figures and descriptive tables",
}

_STAGE_FLAGS = {
    "simulate": (
        ("--n", int, "rows to simulate"),
        ("--clusters", int, "number of country clusters"),
        ("--effect-c", float, "constant treatment effect on the net burden"),
        ("--confounding", float, "treatment selection strength"),
        ("--outcome-noise", float, "outcome noise scale"),
        ("--missing-rate", float, "MCAR missingness fraction"),
        ("--zero-inflation", float, "fraction of structurally zero outcomes"),
    ),
    "impute": (
        ("--m", int, "number of imputations"),
        ("--iterations", int, "sweeps per imputation"),
        ("--donor-k", int, "PMM donor pool size"),
    ),
    "synth": (
        ("--epochs", int, "training epochs"),
        ("--timesteps", int, "diffusion timesteps"),
        ("--samples", int, "twin rows to sample"),
        ("--batch-size", int, "minibatch size"),
    ),
    "estimate": (
        ("--bootstrap-b", int, "bootstrap replicates"),
    ),
    "qte": (
        ("--b", int, "bootstrap replicates"),
        ("--outcome", str, "outcome column"),
    ),
    "cate": (
        ("--stratify", str, "re-estimate per level of this column"),
        ("--df-rule", str, "satterthwaite or clusters-1"),
    ),
    "sense": (
        ("--coefficient", str, "coefficient under scrutiny"),
        ("--benchmark", str, "benchmark covariate for bounds"),
    ),
}

_FLAG_KEY = {
    "--effect-c": ("effect", "c"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twincause",
        description="digital-twin causal inference pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGE_ORDER:
        sp = sub.add_parser(stage, help=_STAGE_HELP[stage])
        _add_common(sp)
        for flag, typ, help_text in _STAGE_FLAGS.get(stage, ()):
            sp.add_argument(flag, type=typ, default=None, help=help_text)
        if stage == "synth":
            sp.add_argument("--balance-arms", action="store_true", default=None,
                            help="equalize treated/control twin counts")
    runp = sub.add_parser("run", help="run all enabled stages from a config file")
    _add_common(runp)
    return parser


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", default=None, help="pipeline config JSON")
    sp.add_argument("--seed", type=int, default=None, help="global seed")
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--threads", type=int, default=None,
                    help="worker threads (results are thread-count invariant)")


def _stage_overrides(args: argparse.Namespace, stage: str) -> dict:
    out = {}
    for flag, _typ, _help in _STAGE_FLAGS.get(stage, ()):
        attr = flag.lstrip("-").replace("-", "_")
        val = getattr(args, attr, None)
        if val is None:
            continue
        if flag in _FLAG_KEY:
            group, key = _FLAG_KEY[flag]
            out.setdefault(group, {})[key] = val
        else:
            out[attr] = val
    if stage == "synth" and getattr(args, "balance_arms", None):
        out["balance_arms"] = True
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        else:
            doc = {}
        if args.command != "run":
            stages = doc.setdefault("stages", {})
            for name in STAGE_ORDER:
                if name in stages:
                    stages[name] = dict(stages[name])
                    stages[name]["enabled"] = name == args.command
            block = dict(stages.get(args.command) or {})
            block.update(_stage_overrides(args, args.command))
            block["enabled"] = True
            stages[args.command] = block
        cfg = PipelineConfig.from_dict(
            doc, seed=args.seed, out_dir=args.out, threads=args.threads)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        manifest = run_pipeline(cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: stages {', '.join(manifest['stages_run'])} -> {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
