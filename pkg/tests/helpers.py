"""Shared test oracles: finite differences and brute-force references."""
import numpy as np

from cohortsurv.autodiff import backward, zero_grads

FD_STEP = 1e-5


def grad_array(t):
    """Gradient as an array; a cleared gradient reads as zero."""
    return np.zeros_like(t.data) if t.grad is None else t.grad


def central_diff(loss_fn, arr, i, j, h=FD_STEP):
    """Central finite difference of a scalar loss wrt one array entry."""
    old = arr[i, j]
    arr[i, j] = old + h
    up = loss_fn()
    arr[i, j] = old - h
    dn = loss_fn()
    arr[i, j] = old
    return (up - dn) / (2.0 * h)


def rel_err(a, f, floor=1e-4):
    """Relative error with a floor: below the floor the check is absolute.

    Central differences at step 1e-5 in float64 resolve derivatives down to
    roughly 1e-10 absolute; gradients smaller than the floor are compared
    absolutely at floor * rtol instead of amplifying measurement noise.
    """
    return abs(a - f) / max(abs(a), abs(f), floor)


def check_gradients(loss_fn, params, rng, entries_per_param=4, tol=1e-5):
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values and
    return the loss tensor.  Returns the maximum relative error seen.
    """
    loss = loss_fn()
    zero_grads(params)
    backward(loss)
    analytic = {p.name: grad_array(p).copy() for p in params}
    zero_grads(params)

    def value():
        return loss_fn().item()

    worst = 0.0
    for p in params:
        rows, cols = p.data.shape
        total = rows * cols
        if total <= entries_per_param:
            picks = [(i, j) for i in range(rows) for j in range(cols)]
        else:
            flat = rng.choice(total, size=entries_per_param, replace=False)
            picks = [(int(f) // cols, int(f) % cols) for f in flat]
        for i, j in picks:
            fd = central_diff(value, p.data, i, j)
            err = rel_err(analytic[p.name][i, j], fd)
            if err > worst:
                worst = err
            assert err < tol, (
                f"gradient mismatch for {p.name}[{i},{j}]: "
                f"analytic={analytic[p.name][i, j]:.3e} fd={fd:.3e} rel={err:.2e}")
    return worst


def matmul_oracle(a, b):
    """Naive triple-loop matrix product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def cindex_oracle(times, censors, risks):
    """O(N^2) pair enumeration for the concordance index."""
    n = len(times)
    comparable = concordant = ties = 0
    for i in range(n):
        if censors[i] != 0:
            continue
        for j in range(n):
            if i == j or not times[i] < times[j]:
                continue
            comparable += 1
            if risks[i] > risks[j]:
                concordant += 1
            elif risks[i] == risks[j]:
                ties += 1
    if comparable == 0:
        return None
    return (concordant + 0.5 * ties) / comparable


def assignment_oracle(score):
    """Best assignment by enumerating all permutations (maximization)."""
    import itertools
    k = score.shape[0]
    best, best_perm = -np.inf, None
    rows = np.arange(k)
    for perm in itertools.permutations(range(k)):
        s = score[rows, list(perm)].sum()
        if s > best:
            best, best_perm = s, perm
    return np.array(best_perm), best
