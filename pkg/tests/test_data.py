"""Cohort data tests: ingestion, label derivation, synthesis."""
import numpy as np
import pytest

from cohortsurv.data import (
    CohortDataset, PatientRecord, SyntheticSpec, assign_groups,
    discretize_times, generate_synthetic, load_cohort, make_folds, write_cohort,
)
from cohortsurv.errors import ConfigError, IngestionError
from cohortsurv.stats import concordance_index


def toy_dataset(times, censors=None, ids=None):
    censors = censors or [0] * len(times)
    ids = ids or [f"p{i:03d}" for i in range(len(times))]
    patients = [
        PatientRecord(ids[i], [np.zeros(2)] * 6, np.zeros((1, 1024)), float(t), int(c))
        for i, (t, c) in enumerate(zip(times, censors))
    ]
    return CohortDataset(patients, (2,) * 6)


# ---------------------------------------------------------------------------
# time bins
# ---------------------------------------------------------------------------

def test_discretize_hand_quantiles():
    ds = toy_dataset([1, 2, 3, 4, 5, 6, 7, 8])
    edges = discretize_times(ds, 4)
    assert list(edges) == [2.0, 4.0, 6.0]
    assert [p.time_bin for p in ds.patients] == [1, 1, 2, 2, 3, 3, 4, 4]


def test_discretize_single_bin():
    ds = toy_dataset([3.0, 9.0, 27.0])
    discretize_times(ds, 1)
    assert all(p.time_bin == 1 for p in ds.patients)


def test_discretize_clamps_censored_beyond_last_edge():
    ds = toy_dataset([1, 2, 3, 4, 1000.0], censors=[0, 0, 0, 0, 1])
    discretize_times(ds, 2)
    assert ds.patients[-1].time_bin == 2


def test_discretize_uses_uncensored_only_and_requires_enough():
    ds = toy_dataset([1, 2, 3], censors=[0, 1, 1])
    with pytest.raises(ConfigError):
        discretize_times(ds, 2)


def test_quantile_monotonicity_property():
    rng = np.random.default_rng(0)
    times = rng.exponential(100, 60)
    ds = toy_dataset(times, censors=list((rng.random(60) < 0.3).astype(int)))
    discretize_times(ds, 4)
    assign_groups(ds, 4)
    ps = ds.patients
    for i in range(len(ps)):
        for j in range(len(ps)):
            if ps[i].time < ps[j].time:
                assert ps[i].time_bin <= ps[j].time_bin
                assert ps[i].group <= ps[j].group


# ---------------------------------------------------------------------------
# risk groups
# ---------------------------------------------------------------------------

def test_groups_equal_split():
    ds = toy_dataset([1, 2, 3, 4])
    assign_groups(ds, 2)
    assert [p.group for p in ds.patients] == [1, 1, 2, 2]


def test_groups_by_rank():
    ds = toy_dataset([5, 1, 3, 2])
    assign_groups(ds, 4)
    assert [p.group for p in ds.patients] == [4, 1, 3, 2]


def test_groups_tie_break_by_id():
    ds = toy_dataset([7, 7, 7, 7], ids=["d", "c", "b", "a"])
    assign_groups(ds, 2)
    # sorted by id: a,b -> group 1; c,d -> group 2
    assert [p.group for p in ds.patients] == [2, 2, 1, 1]


def test_groups_sizes_differ_by_at_most_one():
    ds = toy_dataset(list(range(1, 12)))
    assign_groups(ds, 4)
    sizes = np.bincount([p.group for p in ds.patients])[1:]
    assert sizes.max() - sizes.min() <= 1
    assert sizes.sum() == 11


def test_groups_too_many_is_config_error():
    with pytest.raises(ConfigError):
        assign_groups(toy_dataset([1, 2]), 3)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

def test_folds_partition_and_determinism():
    ds = toy_dataset(list(range(1, 11)))
    make_folds(ds, 5, seed=0)
    first = [p.fold for p in ds.patients]
    sizes = np.bincount(first)
    assert (sizes == 2).all() and sizes.sum() == 10
    make_folds(ds, 5, seed=0)
    assert [p.fold for p in ds.patients] == first
    make_folds(ds, 5, seed=1)
    assert all(f in range(5) for f in (p.fold for p in ds.patients))


def test_folds_require_enough_patients():
    with pytest.raises(ConfigError):
        make_folds(toy_dataset([1, 2, 3]), 5)


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------

def test_synthetic_deterministic_bitwise():
    spec = SyntheticSpec(num_patients=20, seed=3)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec)
    for pa, pb in zip(a.patients, b.patients):
        assert pa.id == pb.id and pa.time == pb.time and pa.censor == pb.censor
        assert pa.oracle_risk == pb.oracle_risk
        assert all(np.array_equal(x, y) for x, y in zip(pa.genomics, pb.genomics))
        assert np.array_equal(pa.patches, pb.patches)


def test_synthetic_censor_fraction_in_binomial_interval():
    spec = SyntheticSpec(num_patients=500, censor_rate=0.3, seed=0)
    ds = generate_synthetic(spec)
    frac = np.mean([p.censor for p in ds.patients])
    assert abs(frac - 0.3) < 0.07


def test_synthetic_oracle_risk_no_synergy_is_latent_function():
    spec = SyntheticSpec(num_patients=30, w_synergy=0.0, noise_std=0.0, seed=1)
    ds = generate_synthetic(spec)
    assert all(p.oracle_risk is not None for p in ds.patients)


def test_synthetic_oracle_cindex_exceeds_planted_signal_floor():
    spec = SyntheticSpec(num_patients=500, w_shared=1, w_genomic=1, w_pathology=1,
                         w_synergy=1, noise_std=0.1, censor_rate=0.2, seed=0)
    ds = generate_synthetic(spec)
    times = [p.time for p in ds.patients]
    censors = [p.censor for p in ds.patients]
    risks = [p.oracle_risk for p in ds.patients]
    assert concordance_index(times, censors, risks) > 0.8


def test_synthetic_patch_counts_within_range():
    spec = SyntheticSpec(num_patients=40, patches_min=3, patches_max=9, seed=5)
    ds = generate_synthetic(spec)
    counts = [p.patches.shape[0] for p in ds.patients]
    assert min(counts) >= 3 and max(counts) <= 9
    assert all(p.patches.shape[1] == 1024 for p in ds.patients)


def test_synthetic_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(censor_rate=1.0)
    with pytest.raises(ConfigError):
        SyntheticSpec(w_shared=0, w_genomic=0, w_pathology=0, w_synergy=0)
    with pytest.raises(ConfigError):
        SyntheticSpec(subseq_lens=(4, 4, 4))


# ---------------------------------------------------------------------------
# manifest round trip and ingestion errors
# ---------------------------------------------------------------------------

def test_write_then_load_round_trip(tmp_path):
    spec = SyntheticSpec(num_patients=3, patches_min=2, patches_max=4,
                         subseq_lens=(5, 4, 3, 2, 2, 2), seed=7)
    ds = generate_synthetic(spec)
    manifest = write_cohort(ds, tmp_path)
    loaded = load_cohort(manifest)
    assert len(loaded) == 3
    assert loaded.subseq_lens == (5, 4, 3, 2, 2, 2)
    for orig, back in zip(ds.patients, loaded.patients):
        assert back.id == orig.id
        assert back.time == orig.time
        assert back.censor == orig.censor
        assert len(back.genomics) == 6
        for a, b in zip(orig.genomics, back.genomics):
            assert np.array_equal(a, b)
        assert np.array_equal(orig.patches, back.patches)
        assert back.time_bin is None and back.group is None and back.fold is None


def _write_minimal(tmp_path, time="10.0", censor="0", patch_width=1024):
    gen = tmp_path / "p0_genomics.csv"
    gen.write_text("\n".join(f"s{i},1.0,2.0" for i in range(6)) + "\n")
    patch = tmp_path / "p0_patches.csv"
    patch.write_text(",".join(["0.5"] * patch_width) + "\n")
    manifest = tmp_path / "cohort.csv"
    manifest.write_text(
        "#subseq_lens=2,2,2,2,2,2\n"
        "patient_id,time_days,censor,genomics_file,patches_file\n"
        f"p0,{time},{censor},p0_genomics.csv,p0_patches.csv\n")
    return manifest


def test_load_rejects_short_patch_row(tmp_path):
    manifest = _write_minimal(tmp_path, patch_width=1023)
    with pytest.raises(IngestionError, match="p0.*1023"):
        load_cohort(manifest)


def test_load_rejects_nonpositive_time(tmp_path):
    manifest = _write_minimal(tmp_path, time="0")
    with pytest.raises(IngestionError, match="non-positive survival time"):
        load_cohort(manifest)


def test_load_rejects_bad_censor(tmp_path):
    manifest = _write_minimal(tmp_path, censor="2")
    with pytest.raises(IngestionError, match="censor"):
        load_cohort(manifest)


def test_load_rejects_missing_file(tmp_path):
    manifest = _write_minimal(tmp_path)
    (tmp_path / "p0_patches.csv").unlink()
    with pytest.raises(IngestionError, match="p0"):
        load_cohort(manifest)


def test_load_rejects_wrong_subseq_count(tmp_path):
    manifest = _write_minimal(tmp_path)
    (tmp_path / "p0_genomics.csv").write_text("s0,1.0,2.0\n")
    with pytest.raises(IngestionError, match="sub-sequences"):
        load_cohort(manifest)
