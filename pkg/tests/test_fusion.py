"""Fusion and hazard machinery tests."""
import numpy as np
import pytest

from cohortsurv.autodiff import Tensor, backward
from cohortsurv.errors import ContractViolation
from cohortsurv.fusion import (
    FusionModel, HazardPrediction, nll_loss, risk_score, survival_function,
    total_loss,
)

from helpers import central_diff, rel_err


def make_model(n_bins=4, width=256, seed=0):
    return FusionModel(np.random.default_rng(seed), n_bins=n_bins, width=width)


def tokens(rng, count, width=256):
    return [Tensor(rng.normal(size=(1, width))) for _ in range(count)]


# ---------------------------------------------------------------------------
# fuse + predict
# ---------------------------------------------------------------------------

def test_hazard_vector_shape_and_range():
    rng = np.random.default_rng(1)
    model = make_model()
    h = model(tokens(rng, 4))
    assert h.data.shape == (1, 4)
    assert (h.data > 0).all() and (h.data < 1).all()


def test_component_token_permutation_equivariance():
    rng = np.random.default_rng(2)
    model = make_model()
    toks = tokens(rng, 4)
    base = model(toks).data
    for perm in ([1, 0, 2, 3], [3, 2, 1, 0], [2, 3, 0, 1]):
        shuffled = [toks[i] for i in perm]
        np.testing.assert_allclose(model(shuffled).data, base, rtol=1e-12, atol=1e-14)


def test_variable_token_count_accepted():
    rng = np.random.default_rng(3)
    model = make_model()
    assert model(tokens(rng, 2)).data.shape == (1, 4)
    assert model(tokens(rng, 7)).data.shape == (1, 4)


def test_gradient_flows_through_transformer_to_tokens():
    rng = np.random.default_rng(4)
    model = FusionModel(np.random.default_rng(5), n_bins=3, width=8, heads=2,
                        layers=1, ff_width=12)
    from cohortsurv.autodiff import Parameter
    tok = Parameter(rng.uniform(-1, 1, size=(1, 8)), name="tok")

    def build():
        return nll_loss(model([tok]), censor=0, time_bin=2)

    backward(build())
    assert tok.grad is not None
    for j in range(8):
        fd = central_diff(lambda: build().item(), tok.data, 0, j)
        assert rel_err(tok.grad[0, j], fd) < 1e-5


# ---------------------------------------------------------------------------
# survival function
# ---------------------------------------------------------------------------

def test_survival_function_fixtures():
    h = [0.5, 0.5, 0.5, 0.5]
    assert survival_function(h, 2) == pytest.approx(0.25)
    assert survival_function(h, 0) == 1.0
    assert survival_function([0.1, 0.2, 0.3], 3) == pytest.approx(0.504)


def test_survival_function_bounds_check():
    with pytest.raises(ContractViolation):
        survival_function([0.5, 0.5], 3)
    with pytest.raises(ContractViolation):
        survival_function([0.5, 0.5], -1)


def test_survival_non_increasing_and_positive():
    rng = np.random.default_rng(6)
    h = rng.uniform(1e-7, 1 - 1e-7, size=8)
    vals = [survival_function(h, k) for k in range(9)]
    assert vals[0] == 1.0
    assert all(0 < v <= 1 for v in vals)
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_hazard_prediction_bundle():
    pred = HazardPrediction.from_hazards([0.5, 0.5])
    assert pred.risk == pytest.approx(-0.75)
    assert pred.survival[0] == 1.0
    assert pred.survival[2] == pytest.approx(0.25)


# ---------------------------------------------------------------------------
# NLL
# ---------------------------------------------------------------------------

def test_nll_fixtures():
    h4 = Tensor(np.full((1, 4), 0.5))
    assert nll_loss(h4, censor=1, time_bin=2).item() == pytest.approx(1.386294, abs=1e-6)
    assert nll_loss(h4, censor=0, time_bin=2).item() == pytest.approx(1.386294, abs=1e-6)
    h = Tensor(np.array([[0.9, 0.5, 0.5]]))
    assert nll_loss(h, censor=0, time_bin=1).item() == pytest.approx(0.105361, abs=1e-6)


def test_nll_nonnegative_property():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        h = Tensor(rng.uniform(1e-7, 1 - 1e-7, size=(1, n)))
        k = int(rng.integers(1, n + 1))
        c = int(rng.integers(0, 2))
        assert nll_loss(h, c, k).item() >= 0.0


def test_nll_input_validation():
    h = Tensor(np.full((1, 4), 0.5))
    with pytest.raises(ContractViolation):
        nll_loss(h, censor=2, time_bin=1)
    with pytest.raises(ContractViolation):
        nll_loss(h, censor=0, time_bin=5)
    with pytest.raises(ContractViolation):
        nll_loss(h, censor=0, time_bin=0)


# ---------------------------------------------------------------------------
# risk score
# ---------------------------------------------------------------------------

def test_risk_score_limits_and_fixture():
    n = 4
    near_one = np.full(n, 1 - 1e-9)
    near_zero = np.full(n, 1e-9)
    assert risk_score(near_one) == pytest.approx(0.0, abs=1e-6)
    assert risk_score(near_zero) == pytest.approx(-4.0, abs=1e-6)
    assert risk_score([0.5, 0.5]) == pytest.approx(-0.75)


def test_risk_score_strictly_monotone_in_each_hazard():
    rng = np.random.default_rng(8)
    h = rng.uniform(0.1, 0.9, size=5)
    base = risk_score(h)
    for j in range(5):
        bumped = h.copy()
        bumped[j] += 0.01
        assert risk_score(bumped) > base


# ---------------------------------------------------------------------------
# total loss
# ---------------------------------------------------------------------------

def test_total_loss_weighting():
    nll = Tensor([[1.0]])
    cohort = Tensor([[2.0]])
    assert total_loss(nll, cohort, 0.0).item() == 1.0
    assert total_loss(nll, cohort, 0.5).item() == 2.0


def test_total_loss_gradient_is_weighted_sum():
    rng = np.random.default_rng(9)
    from cohortsurv.autodiff import Parameter, mean, mul
    x = Parameter(rng.uniform(-1, 1, size=(1, 4)), name="x")
    alpha = 0.7

    def nll_part():
        return mean(mul(x, x))

    def cohort_part():
        return mean(mul(mul(x, x), x))

    backward(total_loss(nll_part(), cohort_part(), alpha))
    combined = x.grad.copy()
    x.grad = None
    backward(nll_part())
    g1 = x.grad.copy()
    x.grad = None
    backward(cohort_part())
    g2 = x.grad.copy()
    x.grad = None
    np.testing.assert_allclose(combined, g1 + alpha * g2, rtol=1e-12, atol=1e-14)
