"""Run configuration, the training loop, cross-validation, ablations, reports."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .autodiff import FusedSGD, backward, no_grad
from .data import (
    CohortDataset, SyntheticSpec, derive_labels, generate_synthetic, load_cohort,
)
from .decomposition import COMPONENT_KEYS
from .errors import ConfigError, TrainingDiverged, UndefinedMetricError, UndefinedTestError
from .fusion import nll_loss, risk_score, total_loss
from .guidance import CohortBank, cohort_loss
from .model import SurvivalModel
from .pathology import Anchor, align_centers, kmeans
from .stats import (
    concordance_index, km_curve, km_table, logrank_test, median_split,
    render_km_svg, welch_ttest,
)

_CONSTRAINT_LETTERS = {"G": "gen_specific", "P": "path_specific",
                       "C": "common", "S": "synergy"}


@dataclass
class RunConfig:
    """Training settings; the defaults are the reference configuration."""
    seed: int = 0
    folds: int = 5
    epochs: int = 30
    lr: float = 1e-3
    alpha: float = 1.0
    temperature: float = 1.0
    k: int = 6
    tau: float = 0.1
    bank_b: int = 10
    groups_r: int = 4
    bins_n: int = 4
    no_cca: bool = False
    no_mkd: bool = False
    no_cgm: bool = False
    constraints: str = "GPCS"
    encoders: str = "2"
    modality: str = "multimodal"
    dtype: str = "float32"
    manifest: str | None = None
    synthetic: dict | None = None

    def __post_init__(self):
        self.constraints = "".join(dict.fromkeys(self.constraints.upper()))
        bad = set(self.constraints) - set(_CONSTRAINT_LETTERS)
        if bad:
            raise ConfigError(f"unknown constraint letters {sorted(bad)}; use subsets of GPCS")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64; got {self.dtype}")

    def constraint_keys(self) -> frozenset:
        return frozenset(_CONSTRAINT_LETTERS[c] for c in self.constraints)

    def numpy_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def cgm_active(self) -> bool:
        return (not self.no_cgm and self.alpha > 0.0
                and self.modality == "multimodal" and not self.no_mkd)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)


@dataclass
class FoldReport:
    """Cross-validated evaluation summary plus the pooled per-patient predictions."""
    config: RunConfig
    fold_cindex: list
    mean_cindex: float
    std_cindex: float
    logrank_chi2: float | None
    logrank_p: float | None
    ttest_t: float | None
    ttest_p: float | None
    wall_seconds: float
    predictions: list = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "folds": [{"fold": f, "cindex": c} for f, c in enumerate(self.fold_cindex)],
            "mean_cindex": self.mean_cindex,
            "std_cindex": self.std_cindex,
            "logrank": {"chi2": self.logrank_chi2, "p": self.logrank_p},
            "ttest": {"t": self.ttest_t, "p": self.ttest_p},
            "wall_seconds": self.wall_seconds,
        }


def load_dataset(config: RunConfig) -> CohortDataset:
    if (config.manifest is None) == (config.synthetic is None):
        raise ConfigError("exactly one data source required: manifest or synthetic spec")
    if config.manifest is not None:
        return load_cohort(config.manifest)
    return generate_synthetic(SyntheticSpec.from_dict(config.synthetic))


def _precompute_centers(config: RunConfig, dataset: CohortDataset, cache: dict | None):
    """Per-patient k-means centers; independent of fold and epoch."""
    centers = {}
    for idx, p in enumerate(dataset.patients):
        key = (idx, config.k, config.seed)
        if cache is not None and key in cache:
            centers[idx] = cache[key]
            continue
        seed = int(np.random.SeedSequence([config.seed, 0x4B, idx]).generate_state(1)[0])
        c = kmeans(p.patches, config.k, seed)
        centers[idx] = c
        if cache is not None:
            cache[key] = c
    return centers


def _build_model(config: RunConfig, dataset: CohortDataset, fold: int) -> SurvivalModel:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, fold, 0x1417]))
    return SurvivalModel(
        rng, dataset.subseq_lens, n_bins=config.bins_n, k=config.k,
        modality=config.modality, use_decomposition=not config.no_mkd,
        encoders=config.encoders, dtype=config.numpy_dtype())


def run_fold(config: RunConfig, dataset: CohortDataset, fold: int, centers):
    """Train on the other folds, return (id, fold, time, censor, risk) rows."""
    model = _build_model(config, dataset, fold)
    optimizer = FusedSGD(model.parameters(), config.lr)
    uses_pathology = model.pathology is not None
    anchor = None
    if uses_pathology and not config.no_cca:
        anchor = Anchor(config.k, dataset.patients[0].patches.shape[1], config.tau)
    bank = CohortBank(config.bank_b) if config.cgm_active() else None
    constraints = config.constraint_keys()

    train_idx = np.array([i for i, p in enumerate(dataset.patients) if p.fold != fold])
    test_idx = [i for i, p in enumerate(dataset.patients) if p.fold == fold]

    def patient_inputs(p, idx, training):
        aligned = None
        if uses_pathology:
            aligned = centers[idx]
            if anchor is not None:
                aligned, _ = align_centers(aligned, anchor)
                if training:
                    anchor.update(aligned)
        seqs = p.genomics if model.genomics is not None else None
        return seqs, aligned

    iteration = 0
    for epoch in range(config.epochs):
        order_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, fold, epoch, 0x0E0C]))
        for idx in train_idx[order_rng.permutation(train_idx.size)]:
            p = dataset.patients[idx]
            iteration += 1
            seqs, aligned = patient_inputs(p, idx, training=True)
            hazards, comps, f_gen, f_path = model.forward(seqs, aligned)
            loss = nll_loss(hazards, p.censor, p.time_bin)
            if bank is not None:
                guidance = cohort_loss(f_gen, f_path, comps, bank, p.group, p.censor,
                                       config.temperature, constraints)
                loss = total_loss(loss, guidance, config.alpha)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at fold {fold}, epoch {epoch}, "
                    f"iteration {iteration}, patient {p.id}")
            backward(loss)
            optimizer.step()
            if bank is not None:
                bank.push(comps.present(), p.group, iteration)
    optimizer.detach()
    if anchor is not None:
        anchor.frozen = True

    rows = []
    with no_grad():
        for idx in test_idx:
            p = dataset.patients[idx]
            seqs, aligned = patient_inputs(p, idx, training=False)
            hazards, _, _, _ = model.forward(seqs, aligned)
            rows.append((p.id, fold, p.time, p.censor, risk_score(hazards.data)))
    return rows


def run_cv(config: RunConfig, dataset: CohortDataset | None = None,
           centers_cache: dict | None = None) -> FoldReport:
    """Five-fold (by default) cross-validation with pooled statistics."""
    start = time.perf_counter()
    if dataset is None:
        dataset = load_dataset(config)
    derive_labels(dataset, config.bins_n, config.groups_r, config.folds, config.seed)
    needs_centers = config.modality in ("multimodal", "pathology")
    centers = _precompute_centers(config, dataset, centers_cache) if needs_centers else {}

    predictions = []
    fold_cindex = []
    for fold in range(config.folds):
        rows = run_fold(config, dataset, fold, centers)
        predictions.extend(rows)
        fold_cindex.append(concordance_index(
            [r[2] for r in rows], [r[3] for r in rows], [r[4] for r in rows]))

    times = np.array([r[2] for r in predictions])
    censors = np.array([r[3] for r in predictions])
    risks = np.array([r[4] for r in predictions])
    logrank_chi2 = logrank_p = ttest_t = ttest_p = None
    try:
        high, low = median_split(risks)
        logrank_chi2, logrank_p = logrank_test(times[high], censors[high],
                                               times[low], censors[low])
        ttest_t, ttest_p = welch_ttest(risks[high], risks[low])
    except (UndefinedMetricError, UndefinedTestError):
        pass
    return FoldReport(
        config=config,
        fold_cindex=fold_cindex,
        mean_cindex=float(np.mean(fold_cindex)),
        std_cindex=float(np.std(fold_cindex)),
        logrank_chi2=logrank_chi2,
        logrank_p=logrank_p,
        ttest_t=ttest_t,
        ttest_p=ttest_p,
        wall_seconds=time.perf_counter() - start,
        predictions=predictions,
    )


# ---------------------------------------------------------------------------
# ablation grids
# ---------------------------------------------------------------------------

def _replace(config: RunConfig, **kw) -> RunConfig:
    d = config.to_dict()
    d.update(kw)
    return RunConfig.from_dict(d)


def ablation_grid(config: RunConfig, suites) -> list:
    """(suite, label, config) cells for the requested suites."""
    cells = []
    if "modules" in suites:
        cells += [
            ("modules", "baseline", _replace(config, no_cca=True, no_mkd=True, no_cgm=True)),
            ("modules", "cca", _replace(config, no_cca=False, no_mkd=True, no_cgm=True)),
            ("modules", "cca+mkd", _replace(config, no_cca=False, no_mkd=False, no_cgm=True)),
            ("modules", "full", _replace(config, no_cca=False, no_mkd=False, no_cgm=False)),
        ]
    if "encoders" in suites:
        for variant in ("5", "3", "1_common", "1_synergistic", "2"):
            cells.append(("encoders", variant, _replace(config, encoders=variant)))
    if "constraints" in suites:
        for subset in ("GPS", "GPC", "PCS", "GCS", "GPCS"):
            cells.append(("constraints", subset, _replace(config, constraints=subset)))
    if "hypers" in suites:
        for k in (4, 6, 9):
            cells.append(("hypers", f"k={k}", _replace(config, k=k)))
        for tau in (0.05, 0.1, 0.3):
            cells.append(("hypers", f"tau={tau}", _replace(config, tau=tau)))
        for b in (5, 10, 20):
            cells.append(("hypers", f"b={b}", _replace(config, bank_b=b)))
        for r in (2, 4, 6):
            cells.append(("hypers", f"r={r}", _replace(config, groups_r=r)))
    return cells


def run_ablation_suite(config: RunConfig, suites=("modules", "encoders", "constraints", "hypers"),
                       out_csv=None) -> list:
    """One cross-validated report per grid cell; optionally written as one CSV."""
    dataset = load_dataset(config)
    centers_cache: dict = {}
    results = []
    for suite, label, cell in ablation_grid(config, suites):
        report = run_cv(cell, dataset, centers_cache)
        results.append((suite, label, report))
    if out_csv is not None:
        write_ablation_csv(results, out_csv)
    return results


def write_ablation_csv(results, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    folds = max(len(r.fold_cindex) for _, _, r in results)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["suite", "variant", "mean_cindex", "std_cindex"]
                        + [f"fold{i}_cindex" for i in range(folds)]
                        + ["logrank_p", "ttest_p"])
        for suite, label, r in results:
            writer.writerow([suite, label, f"{r.mean_cindex:.6f}", f"{r.std_cindex:.6f}"]
                            + [f"{c:.6f}" for c in r.fold_cindex]
                            + [_fmt(r.logrank_p), _fmt(r.ttest_p)])


def _fmt(v):
    return "" if v is None else f"{v:.6g}"


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def emit_report(report: FoldReport, out_dir) -> dict:
    """Write report.json, cindex.csv, km.csv, km.svg; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.json",
        "cindex": out / "cindex.csv",
        "km_csv": out / "km.csv",
        "km_svg": out / "km.svg",
    }
    paths["report"].write_text(
        json.dumps(report.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    with open(paths["cindex"], "w", encoding="utf-8", newline="\n") as f:
        f.write("fold,cindex\n")
        for i, c in enumerate(report.fold_cindex):
            f.write(f"{i},{c!r}\n")

    times = np.array([r[2] for r in report.predictions])
    censors = np.array([r[3] for r in report.predictions])
    risks = np.array([r[4] for r in report.predictions])
    rows = []
    svg = None
    if report.predictions:
        high, low = median_split(risks)
        if high.size and low.size:
            curve_high = km_curve(times[high], censors[high])
            curve_low = km_curve(times[low], censors[low])
            rows = km_table(curve_high, curve_low)
            svg = render_km_svg(curve_high, curve_low, report.logrank_p)
    with open(paths["km_csv"], "w", encoding="utf-8", newline="\n") as f:
        f.write("time,S_high,S_low\n")
        for t, sh, sl in rows:
            f.write(f"{t!r},{sh!r},{sl!r}\n")
    if svg is None:
        svg = render_km_svg(km_curve([1.0], [1]), km_curve([1.0], [1]), report.logrank_p)
    paths["km_svg"].write_text(svg, encoding="utf-8")
    return paths


# ---------------------------------------------------------------------------
# standalone evaluation of a predictions table
# ---------------------------------------------------------------------------

def evaluate_predictions(path) -> dict:
    """Metrics for a CSV with header patient_id,time_days,censor,risk."""
    rows = []
    with open(path, encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"patient_id", "time_days", "censor", "risk"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ConfigError(f"predictions file must have columns {sorted(required)}")
        for row in reader:
            rows.append((row["patient_id"], float(row["time_days"]),
                         int(row["censor"]), float(row["risk"])))
    times = np.array([r[1] for r in rows])
    censors = np.array([r[2] for r in rows])
    risks = np.array([r[3] for r in rows])
    out = {"n": len(rows), "cindex": concordance_index(times, censors, risks)}
    try:
        high, low = median_split(risks)
        chi2, p = logrank_test(times[high], censors[high], times[low], censors[low])
        out["logrank"] = {"chi2": chi2, "p": p}
        t, tp = welch_ttest(risks[high], risks[low])
        out["ttest"] = {"t": t, "p": tp}
    except (UndefinedMetricError, UndefinedTestError):
        out["logrank"] = {"chi2": None, "p": None}
        out["ttest"] = {"t": None, "p": None}
    return out
