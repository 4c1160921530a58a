"""Command-line interface: train, evaluate, ablate, synth-gen, report."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import SyntheticSpec, generate_synthetic, write_cohort
from .harness import (
    RunConfig, emit_report, evaluate_predictions, run_ablation_suite, run_cv,
)


def _add_config_flags(p: argparse.ArgumentParser):
    defaults = RunConfig(manifest="ignored")
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--folds", type=int, default=defaults.folds)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--lr", type=float, default=defaults.lr)
    p.add_argument("--alpha", type=float, default=defaults.alpha)
    p.add_argument("--temperature", type=float, default=defaults.temperature)
    p.add_argument("--k", type=int, default=defaults.k, help="pathology cluster count")
    p.add_argument("--tau", type=float, default=defaults.tau, help="anchor update ratio")
    p.add_argument("--bank", type=int, default=defaults.bank_b, help="cohort bank capacity")
    p.add_argument("--groups", type=int, default=defaults.groups_r, help="risk group count")
    p.add_argument("--bins", type=int, default=defaults.bins_n, help="time bin count")
    p.add_argument("--no-cca", action="store_true", help="skip cluster center alignment")
    p.add_argument("--no-mkd", action="store_true", help="skip knowledge decomposition")
    p.add_argument("--no-cgm", action="store_true", help="skip cohort guidance")
    p.add_argument("--constraints", default=defaults.constraints,
                   help="subset of GPCS kept in the similarity loss")
    p.add_argument("--encoders", default=defaults.encoders,
                   choices=["1_common", "1_synergistic", "2", "3", "5"])
    p.add_argument("--modality", default=defaults.modality,
                   choices=["multimodal", "genomics", "pathology"])
    p.add_argument("--dtype", default=defaults.dtype, choices=["float32", "float64"])
    p.add_argument("--manifest", help="path to a cohort.csv manifest")
    p.add_argument("--synthetic", help="path to a synthetic-spec JSON file")


def _config_from_args(args) -> RunConfig:
    synthetic = None
    if args.synthetic:
        synthetic = json.loads(Path(args.synthetic).read_text(encoding="utf-8"))
    return RunConfig(
        seed=args.seed, folds=args.folds, epochs=args.epochs, lr=args.lr,
        alpha=args.alpha, temperature=args.temperature, k=args.k, tau=args.tau,
        bank_b=args.bank, groups_r=args.groups, bins_n=args.bins,
        no_cca=args.no_cca, no_mkd=args.no_mkd, no_cgm=args.no_cgm,
        constraints=args.constraints, encoders=args.encoders,
        modality=args.modality, dtype=args.dtype,
        manifest=args.manifest, synthetic=synthetic,
    )


def _print_summary(report):
    print(f"mean C-index: {report.mean_cindex:.4f} +/- {report.std_cindex:.4f}")
    for i, c in enumerate(report.fold_cindex):
        print(f"  fold {i}: {c:.4f}")
    if report.logrank_p is not None:
        print(f"log-rank: chi2={report.logrank_chi2:.4f} p={report.logrank_p:.3g}")
    if report.ttest_p is not None:
        print(f"t-test:   t={report.ttest_t:.4f} p={report.ttest_p:.3g}")
    print(f"wall time: {report.wall_seconds:.1f}s")


def cmd_train(args):
    report = run_cv(_config_from_args(args))
    paths = emit_report(report, args.out)
    _print_summary(report)
    print(f"report written to {paths['report']}")


def cmd_evaluate(args):
    result = evaluate_predictions(args.predictions)
    text = json.dumps(result, indent=2)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "evaluation.json").write_text(text + "\n", encoding="utf-8")
        print(f"evaluation written to {out / 'evaluation.json'}")
    print(text)


def cmd_ablate(args):
    suites = ("modules", "encoders", "constraints", "hypers") if args.suite == "all" \
        else (args.suite,)
    out_csv = Path(args.out) / "ablation.csv"
    results = run_ablation_suite(_config_from_args(args), suites, out_csv)
    for suite, label, report in results:
        print(f"{suite:12s} {label:16s} mean C-index {report.mean_cindex:.4f} "
              f"+/- {report.std_cindex:.4f}")
    print(f"table written to {out_csv}")


def cmd_synth_gen(args):
    spec_dict = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    dataset = generate_synthetic(SyntheticSpec.from_dict(spec_dict))
    manifest = write_cohort(dataset, args.out)
    n_cens = sum(p.censor for p in dataset.patients)
    print(f"wrote {len(dataset)} patients ({n_cens} censored) under {manifest.parent}")
    print(f"manifest: {manifest}")


def cmd_report(args):
    data = json.loads(Path(args.report).read_text(encoding="utf-8"))
    cfg = data["config"]
    print(f"config: seed={cfg['seed']} epochs={cfg['epochs']} lr={cfg['lr']} "
          f"alpha={cfg['alpha']} k={cfg['k']} tau={cfg['tau']} bank={cfg['bank_b']} "
          f"groups={cfg['groups_r']} bins={cfg['bins_n']} modality={cfg['modality']}")
    flags = [f for f in ("no_cca", "no_mkd", "no_cgm") if cfg.get(f)]
    if flags:
        print(f"ablations: {', '.join(flags)}")
    print(f"mean C-index: {data['mean_cindex']:.4f} +/- {data['std_cindex']:.4f}")
    for row in data["folds"]:
        print(f"  fold {row['fold']}: {row['cindex']:.4f}")
    lr_, tt = data["logrank"], data["ttest"]
    if lr_["p"] is not None:
        print(f"log-rank: chi2={lr_['chi2']:.4f} p={lr_['p']:.3g}")
    if tt["p"] is not None:
        print(f"t-test:   t={tt['t']:.4f} p={tt['p']:.3g}")
    print(f"wall time: {data['wall_seconds']:.1f}s")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="cohortsurv",
        description="Cohort-guided multimodal survival analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="cross-validated training run")
    _add_config_flags(p_train)
    p_train.add_argument("--out", required=True, help="output directory for the report")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a predictions CSV")
    p_eval.add_argument("--predictions", required=True,
                        help="CSV with patient_id,time_days,censor,risk")
    p_eval.add_argument("--out", help="optional output directory")
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="run an ablation grid")
    _add_config_flags(p_abl)
    p_abl.add_argument("--suite", default="all",
                       choices=["modules", "encoders", "constraints", "hypers", "all"])
    p_abl.add_argument("--out", required=True)
    p_abl.set_defaults(func=cmd_ablate)

    p_gen = sub.add_parser("synth-gen", help="generate a synthetic cohort on disk")
    p_gen.add_argument("--spec", required=True, help="synthetic-spec JSON file")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_synth_gen)

    p_rep = sub.add_parser("report", help="print a report.json summary")
    p_rep.add_argument("--report", required=True, help="path to report.json")
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
