"""Cohort ingestion, synthesis, and derived labels (time bins, groups, folds).

File formats
------------
Manifest ``cohort.csv``: a comment line ``#subseq_lens=a,b,c,d,e,f`` followed
by the header ``patient_id,time_days,censor,genomics_file,patches_file``.
Referenced paths are resolved relative to the manifest.  A genomics file has
six lines ``subseq_name,v1,v2,...`` whose lengths match the manifest comment;
a patches file has one 1024-value comma-separated row per patch.  All files
are UTF-8 with LF newlines and '.' decimal separators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError

PATCH_DIM = 1024
NUM_SUBSEQS = 6

DEFAULT_SUBSEQ_LENS = (48, 40, 36, 32, 28, 24)


@dataclass
class PatientRecord:
    id: str
    genomics: list            # six 1-D float arrays
    patches: np.ndarray       # (m, 1024)
    time: float               # days, > 0
    censor: int               # 1 = censored
    time_bin: int | None = None
    group: int | None = None
    fold: int | None = None
    oracle_risk: float | None = None


@dataclass
class CohortDataset:
    patients: list
    subseq_lens: tuple
    bin_edges: np.ndarray | None = None
    group_edges: np.ndarray | None = None
    n_bins: int | None = None
    n_groups: int | None = None

    def __len__(self):
        return len(self.patients)


@dataclass
class SyntheticSpec:
    """Generator settings for cohorts with planted shared/unique/synergy signal."""
    num_patients: int = 500
    dim_shared: int = 4       # latent seen by both modalities
    dim_genomic: int = 4      # latent seen only by genomics
    dim_pathology: int = 4    # latent seen only by pathology
    dim_synergy: int = 1      # binary pairs whose XOR carries signal
    w_shared: float = 1.0
    w_genomic: float = 1.0
    w_pathology: float = 1.0
    w_synergy: float = 1.0
    censor_rate: float = 0.2
    patches_min: int = 8
    patches_max: int = 32
    noise_std: float = 0.1
    seed: int = 0
    subseq_lens: tuple = DEFAULT_SUBSEQ_LENS
    time_scale: float = 365.0

    def __post_init__(self):
        self.subseq_lens = tuple(int(x) for x in self.subseq_lens)
        if len(self.subseq_lens) != NUM_SUBSEQS:
            raise ConfigError(f"subseq_lens must have {NUM_SUBSEQS} entries")
        if not (0.0 <= self.censor_rate < 1.0):
            raise ConfigError(f"censor_rate must be in [0, 1); got {self.censor_rate}")
        if max(self.w_shared, self.w_genomic, self.w_pathology, self.w_synergy) <= 0:
            raise ConfigError("at least one signal weight must be positive")
        if self.patches_min < 1 or self.patches_max < self.patches_min:
            raise ConfigError("invalid patches_per_patient range")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["subseq_lens"] = list(self.subseq_lens)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**{k: (tuple(v) if k == "subseq_lens" else v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _parse_floats(text: str, what: str, pid: str):
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as e:
        raise IngestionError(f"patient {pid}: unparseable value in {what}: {e}") from None


def load_cohort(manifest_path) -> CohortDataset:
    """Read a cohort manifest and all referenced per-patient files."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise IngestionError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    subseq_lens = None
    rows = []
    with open(manifest_path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#subseq_lens="):
                    subseq_lens = tuple(int(v) for v in line.split("=", 1)[1].split(","))
                continue
            rows.append(line)
    if subseq_lens is None:
        raise IngestionError("manifest missing '#subseq_lens=' header comment")
    if len(subseq_lens) != NUM_SUBSEQS:
        raise IngestionError(f"manifest declares {len(subseq_lens)} sub-sequence lengths; need {NUM_SUBSEQS}")
    header = "patient_id,time_days,censor,genomics_file,patches_file"
    if not rows or rows[0] != header:
        raise IngestionError(f"manifest header must be '{header}'")

    patients = []
    for line in rows[1:]:
        parts = line.split(",")
        if len(parts) != 5:
            raise IngestionError(f"manifest row has {len(parts)} columns, expected 5: {line!r}")
        pid, time_s, censor_s, gen_file, patch_file = parts
        try:
            time = float(time_s)
        except ValueError:
            raise IngestionError(f"patient {pid}: unparseable time_days {time_s!r}") from None
        if not math.isfinite(time) or time <= 0:
            raise IngestionError(f"patient {pid}: non-positive survival time {time_s}")
        if censor_s not in ("0", "1"):
            raise IngestionError(f"patient {pid}: censor must be 0 or 1, got {censor_s!r}")
        genomics = _load_genomics(base / gen_file, subseq_lens, pid)
        patches = _load_patches(base / patch_file, pid)
        patients.append(PatientRecord(pid, genomics, patches, time, int(censor_s)))
    return CohortDataset(patients, subseq_lens)


def _load_genomics(path: Path, subseq_lens, pid: str):
    if not path.exists():
        raise IngestionError(f"patient {pid}: genomics file missing: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln]
    if len(lines) != NUM_SUBSEQS:
        raise IngestionError(f"patient {pid}: genomics file has {len(lines)} sub-sequences, expected {NUM_SUBSEQS}")
    seqs = []
    for i, ln in enumerate(lines):
        name, _, values = ln.partition(",")
        seq = _parse_floats(values, f"sub-sequence {i} ({name})", pid)
        if seq.size != subseq_lens[i]:
            raise IngestionError(
                f"patient {pid}: sub-sequence {i} ({name}) has length {seq.size}, "
                f"manifest declares {subseq_lens[i]}")
        seqs.append(seq)
    return seqs


def _load_patches(path: Path, pid: str):
    if not path.exists():
        raise IngestionError(f"patient {pid}: patches file missing: {path}")
    rows = []
    for i, ln in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not ln:
            continue
        row = _parse_floats(ln, f"patch row {i}", pid)
        if row.size != PATCH_DIM:
            raise IngestionError(
                f"patient {pid}: patch row {i} has {row.size} values, expected {PATCH_DIM}")
        rows.append(row)
    if not rows:
        raise IngestionError(f"patient {pid}: patches file is empty: {path}")
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# derived labels
# ---------------------------------------------------------------------------

def _lower_quantiles(sorted_vals: np.ndarray, cuts: int) -> np.ndarray:
    """Equal-frequency edges: the q-quantiles with 'lower' interpolation."""
    qs = np.arange(1, cuts) / cuts
    idx = np.floor(qs * (sorted_vals.size - 1)).astype(int)
    return sorted_vals[idx]


def discretize_times(dataset: CohortDataset, n: int) -> np.ndarray:
    """Set time_bin in {1..n} from equal-frequency quantiles of uncensored times.

    Intervals are right-closed; every patient (censored included) lands in the
    interval containing its time, clamping beyond the last edge to bin n.
    """
    if n < 1:
        raise ConfigError(f"number of time bins must be >= 1; got {n}")
    uncensored = np.sort(np.array([p.time for p in dataset.patients if p.censor == 0]))
    if uncensored.size < n:
        raise ConfigError(
            f"need at least {n} uncensored patients to build {n} time bins; have {uncensored.size}")
    edges = _lower_quantiles(uncensored, n) if n > 1 else np.array([])
    if edges.size > 1 and not (np.diff(edges) > 0).all():
        raise ConfigError(
            "time-bin edges are not strictly ascending (too many tied uncensored times)")
    for p in dataset.patients:
        p.time_bin = 1 + int((p.time > edges).sum())
    dataset.bin_edges = edges
    dataset.n_bins = n
    return edges


def assign_groups(dataset: CohortDataset, r: int) -> np.ndarray:
    """Split all patients into r equal-count groups by time; group 1 = shortest.

    Ties are broken by patient id so the split is deterministic.
    """
    n = len(dataset.patients)
    if r < 1 or r > n:
        raise ConfigError(f"cannot split {n} patients into {r} groups")
    order = sorted(range(n), key=lambda i: (dataset.patients[i].time, dataset.patients[i].id))
    chunks = np.array_split(np.array(order), r)
    for g, chunk in enumerate(chunks, start=1):
        for i in chunk:
            dataset.patients[i].group = g
    edges = np.array([dataset.patients[chunk[-1]].time for chunk in chunks[:-1]])
    dataset.group_edges = edges
    dataset.n_groups = r
    return edges


def make_folds(dataset: CohortDataset, folds: int = 5, seed: int = 0):
    """Seeded shuffle then contiguous partition into folds of near-equal size."""
    n = len(dataset.patients)
    if n < folds:
        raise ConfigError(f"cannot make {folds} folds from {n} patients")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    perm = rng.permutation(n)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        for i in chunk:
            dataset.patients[i].fold = f


def derive_labels(dataset: CohortDataset, n_bins: int, n_groups: int,
                  folds: int = 5, seed: int = 0):
    discretize_times(dataset, n_bins)
    assign_groups(dataset, n_groups)
    make_folds(dataset, folds, seed)


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------

def generate_synthetic(spec: SyntheticSpec) -> CohortDataset:
    """Sample a cohort whose hazard mixes shared, modality-unique, and XOR signal.

    Genomics sees [shared, genomic-unique, s1]; pathology sees
    [shared, pathology-unique, s2]; the XOR of the binary pair is visible to
    neither modality alone.  The exact log-hazard is kept per patient as
    ``oracle_risk``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
    dg = spec.dim_shared + spec.dim_genomic + spec.dim_synergy
    dp = spec.dim_shared + spec.dim_pathology + spec.dim_synergy
    gen_maps = [rng.normal(0.0, 1.0 / np.sqrt(dg), size=(dg, L)) for L in spec.subseq_lens]
    patch_map = rng.normal(0.0, 1.0 / np.sqrt(dp), size=(dp, PATCH_DIM))

    patients = []
    width = len(str(max(spec.num_patients - 1, 1)))
    for idx in range(spec.num_patients):
        z_shared = rng.standard_normal(spec.dim_shared)
        z_gen = rng.standard_normal(spec.dim_genomic)
        z_path = rng.standard_normal(spec.dim_pathology)
        s1 = rng.integers(0, 2, size=spec.dim_synergy)
        s2 = rng.integers(0, 2, size=spec.dim_synergy)
        xor = np.bitwise_xor(s1, s2)

        gen_latent = np.concatenate([z_shared, z_gen, s1.astype(float)])
        genomics = [gen_latent @ m + spec.noise_std * rng.standard_normal(m.shape[1])
                    for m in gen_maps]
        path_latent = np.concatenate([z_shared, z_path, s2.astype(float)])
        base_patch = path_latent @ patch_map
        m = int(rng.integers(spec.patches_min, spec.patches_max + 1))
        patches = base_patch + spec.noise_std * rng.standard_normal((m, PATCH_DIM))

        score = (spec.w_shared * z_shared.sum()
                 + spec.w_genomic * z_gen.sum()
                 + spec.w_pathology * z_path.sum()
                 + spec.w_synergy * float(xor.sum()))
        rate = np.exp(score)
        time = float(rng.exponential(1.0 / rate) * spec.time_scale)
        censor = 0
        if rng.random() < spec.censor_rate:
            time = float(rng.uniform(0.0, time))
            censor = 1
        if time <= 0.0 or not math.isfinite(time):
            time = np.nextafter(0.0, 1.0)
        patients.append(PatientRecord(
            id=f"synth{idx:0{width}d}", genomics=genomics, patches=patches,
            time=time, censor=censor, oracle_risk=float(score)))
    return CohortDataset(patients, spec.subseq_lens)


def write_cohort(dataset: CohortDataset, out_dir) -> Path:
    """Write a cohort in the manifest format; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lens = ",".join(str(x) for x in dataset.subseq_lens)
    lines = [f"#subseq_lens={lens}",
             "patient_id,time_days,censor,genomics_file,patches_file"]
    names = ["tumor_suppression", "oncogenesis", "protein_kinases",
             "cell_differentiation", "transcription", "cytokine_growth"]
    for p in dataset.patients:
        gen_file = f"{p.id}_genomics.csv"
        patch_file = f"{p.id}_patches.csv"
        with open(out / gen_file, "w", encoding="utf-8", newline="\n") as f:
            for name, seq in zip(names, p.genomics):
                f.write(name + "," + ",".join(repr(float(v)) for v in seq) + "\n")
        with open(out / patch_file, "w", encoding="utf-8", newline="\n") as f:
            for row in p.patches:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
        lines.append(f"{p.id},{p.time!r},{p.censor},{gen_file},{patch_file}")
    manifest = out / "cohort.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if any(p.oracle_risk is not None for p in dataset.patients):
        with open(out / "oracle_risk.csv", "w", encoding="utf-8", newline="\n") as f:
            f.write("patient_id,oracle_risk\n")
            for p in dataset.patients:
                f.write(f"{p.id},{p.oracle_risk!r}\n")
    return manifest
