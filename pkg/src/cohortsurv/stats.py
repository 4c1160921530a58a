"""Censorship-aware evaluation statistics.

Concordance index, Kaplan-Meier product-limit curves, the two-group log-rank
test and Welch's t-test.  P-values come from in-house regularized incomplete
gamma/beta functions (continued fractions) so the package needs no external
statistics dependency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError, UndefinedTestError

_TOL = 1e-14
_MAX_ITER = 500


@dataclass(frozen=True)
class SurvivalOutcome:
    """One evaluated patient: observed time, censor flag (1 = censored), risk."""
    time: float
    censor: int
    risk: float


def split_outcomes(outcomes):
    times = np.array([o.time for o in outcomes], dtype=float)
    censors = np.array([o.censor for o in outcomes], dtype=int)
    risks = np.array([o.risk for o in outcomes], dtype=float)
    return times, censors, risks


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def _gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by series; needs x < a + 1."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _TOL:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _gamma_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by continued fraction; x >= a + 1."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _TOL:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))

def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if a <= 0.0 or x < 0.0:
        raise ValueError(f"gammainc_upper requires a > 0 and x >= 0; got a={a}, x={x}")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)

def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _TOL:
            break
    return h

def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"betainc requires positive parameters; got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b

def chi2_sf(x: float, df: float = 1.0) -> float:
    """Upper tail of the chi-square distribution."""
    return gammainc_upper(df / 2.0, x / 2.0)

def student_t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided p-value of Student's t."""
    return betainc(df / 2.0, 0.5, df / (df + t * t))


# ---------------------------------------------------------------------------
# concordance index
# ---------------------------------------------------------------------------

def concordance_index(times, censors, risks) -> float:
    """Fraction of comparable pairs ranked consistently by risk.

    A pair (i, j) is comparable iff t_i < t_j and patient i is uncensored;
    it is concordant when risk_i > risk_j, and tied risks count one half.
    """
    t = np.asarray(times, dtype=float)
    c = np.asarray(censors, dtype=int)
    r = np.asarray(risks, dtype=float)
    earlier = t[:, None] < t[None, :]
    comparable = earlier & (c == 0)[:, None]
    n_comp = int(comparable.sum())
    if n_comp == 0:
        raise UndefinedMetricError("concordance index undefined: no comparable pairs")
    concordant = int((comparable & (r[:, None] > r[None, :])).sum())
    tied = int((comparable & (r[:, None] == r[None, :])).sum())
    return (concordant + 0.5 * tied) / n_comp


# ---------------------------------------------------------------------------
# Kaplan-Meier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KMCurve:
    """Product-limit estimate: survival after each distinct event time."""
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def value_at(self, t: float) -> float:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return 1.0 if idx < 0 else float(self.survival[idx])


def km_curve(times, censors) -> KMCurve:
    """Kaplan-Meier estimator; censored patients leave the risk set after their time."""
    t = np.asarray(times, dtype=float)
    c = np.asarray(censors, dtype=int)
    if t.size == 0:
        raise UndefinedMetricError("Kaplan-Meier curve requires at least one patient")
    event_times = np.unique(t[c == 0])
    surv, at_risk, events = [], [], []
    s = 1.0
    for et in event_times:
        n = int((t >= et).sum())
        d = int(((t == et) & (c == 0)).sum())
        s *= 1.0 - d / n
        surv.append(s)
        at_risk.append(n)
        events.append(d)
    return KMCurve(event_times, np.array(surv), np.array(at_risk, dtype=int),
                   np.array(events, dtype=int))


def logrank_test(times_a, censors_a, times_b, censors_b):
    """Two-group log-rank test; returns (chi2, p)."""
    ta = np.asarray(times_a, dtype=float)
    ca = np.asarray(censors_a, dtype=int)
    tb = np.asarray(times_b, dtype=float)
    cb = np.asarray(censors_b, dtype=int)
    if ta.size == 0 or tb.size == 0:
        raise UndefinedTestError("log-rank test requires two non-empty groups")
    event_times = np.unique(np.concatenate([ta[ca == 0], tb[cb == 0]]))
    if event_times.size == 0:
        raise UndefinedTestError("log-rank test undefined: no events in either group")
    o_minus_e = 0.0
    var = 0.0
    for et in event_times:
        n1 = int((ta >= et).sum())
        n2 = int((tb >= et).sum())
        n = n1 + n2
        d1 = int(((ta == et) & (ca == 0)).sum())
        d2 = int(((tb == et) & (cb == 0)).sum())
        d = d1 + d2
        if n == 0 or d == 0:
            continue
        e1 = d * n1 / n
        o_minus_e += d1 - e1
        if n > 1:
            var += d * (n1 / n) * (n2 / n) * (n - d) / (n - 1)
    if var == 0.0:
        if o_minus_e == 0.0:
            return 0.0, 1.0
        raise UndefinedTestError("log-rank test undefined: zero variance with nonzero deviation")
    chi2 = o_minus_e * o_minus_e / var
    return chi2, chi2_sf(chi2, 1.0)


def welch_ttest(a, b):
    """Welch's unequal-variance t-test; returns (t, two-sided p)."""
    xa = np.asarray(a, dtype=float)
    xb = np.asarray(b, dtype=float)
    if xa.size < 2 or xb.size < 2:
        raise UndefinedTestError("Welch t-test requires at least two values per sample")
    va = xa.var(ddof=1)
    vb = xb.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise UndefinedTestError("Welch t-test undefined: both samples have zero variance")
    sa = va / xa.size
    sb = vb / xb.size
    se2 = sa + sb
    t = (xa.mean() - xb.mean()) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (xa.size - 1) + sb * sb / (xb.size - 1))
    if t == 0.0:
        return 0.0, 1.0
    return float(t), student_t_sf_two_sided(t, df)


def median_split(risks):
    """Indices of the high-risk (> median) and low-risk groups; median ties go low."""
    r = np.asarray(risks, dtype=float)
    if r.size < 2:
        raise UndefinedMetricError("median split requires at least two patients")
    med = float(np.median(r))
    high = np.flatnonzero(r > med)
    low = np.flatnonzero(r <= med)
    return high, low


# ---------------------------------------------------------------------------
# KM emission (CSV rows and a standalone SVG)
# ---------------------------------------------------------------------------

def km_table(curve_high: KMCurve, curve_low: KMCurve):
    """Rows (time, S_high, S_low) at the union of the two groups' event times."""
    times = np.unique(np.concatenate([curve_high.times, curve_low.times]))
    return [(float(t), curve_high.value_at(t), curve_low.value_at(t)) for t in times]


def _step_points(curve: KMCurve, t_max: float):
    pts = [(0.0, 1.0)]
    s = 1.0
    for t, sv in zip(curve.times, curve.survival):
        pts.append((float(t), s))
        pts.append((float(t), float(sv)))
        s = float(sv)
    pts.append((t_max, s))
    return pts


def render_km_svg(curve_high: KMCurve, curve_low: KMCurve, p_value) -> str:
    """Standalone SVG with the two step curves and the log-rank p annotated."""
    width, height, margin = 640, 440, 56
    t_max = 1.0
    for c in (curve_high, curve_low):
        if c.times.size:
            t_max = max(t_max, float(c.times.max()))
    t_max *= 1.05

    def sx(t):
        return margin + (width - 2 * margin) * t / t_max

    def sy(s):
        return margin + (height - 2 * margin) * (1.0 - s)

    def polyline(curve, color):
        pts = " ".join(f"{sx(t):.2f},{sy(s):.2f}" for t, s in _step_points(curve, t_max))
        return (f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                f'points="{pts}"/>')

    p_text = "log-rank p = n/a" if p_value is None else f"log-rank p = {p_value:.3g}"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="13">time</text>',
        f'<text x="16" y="{height // 2}" font-size="13" '
        f'transform="rotate(-90 16 {height // 2})" text-anchor="middle">survival</text>',
        polyline(curve_high, "#d62728"),
        polyline(curve_low, "#1f77b4"),
        f'<text x="{width - margin - 4}" y="{margin + 16}" text-anchor="end" '
        f'font-size="13">{p_text}</text>',
        f'<text x="{width - margin - 4}" y="{margin + 34}" text-anchor="end" '
        f'font-size="12" fill="#d62728">high risk</text>',
        f'<text x="{width - margin - 4}" y="{margin + 50}" text-anchor="end" '
        f'font-size="12" fill="#1f77b4">low risk</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
