from __future__ import annotations

import numpy as np


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def numeric_gradient(f, params, eps=1e-5, indices=None):
    """Central differences of scalar ``f`` at the flat vector ``params``."""
    p = np.array(params, dtype=np.float64).ravel()
    idx = range(p.size) if indices is None else indices
    out = np.zeros(p.size)
    for i in idx:
        old = p[i]
        up, down = old + eps, old - eps
        p[i] = up
        hi = f(p)
        p[i] = down
        lo = f(p)
        p[i] = old
        out[i] = (hi - lo) / (up - down)  # the step actually taken, after rounding
    return out


def grad_check_detail(f, params, eps=1e-5, indices=None, value_fn=None, refine=False, tol=1e-4):
    """Like :func:`grad_check` but returns ``(max_rel_err, refined)``.

    With ``refine`` set, coordinates whose error reaches ``tol`` are measured
    again with steps eps/10 and eps/100 and keep the best result; ``refined``
    lists those that passed only with a smaller step. A difference quotient
    that straddles a ReLU hinge recovers once the step is shorter than the
    distance to the hinge, while a wrong analytic gradient is off by the same
    amount at every step and still fails.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    _, analytic = f(p.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    value_fn = value_fn or (lambda q: f(q)[0])
    numeric = numeric_gradient(value_fn, p, eps, indices)
    idx = np.arange(p.size) if indices is None else np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        return 0.0, []
    err = relative_error(analytic[idx], numeric[idx])
    refined = []
    if refine:
        bad = np.flatnonzero(err >= tol)
        for step in (eps / 10, eps / 100):
            if bad.size == 0:
                break
            again = numeric_gradient(value_fn, p, step, idx[bad])
            err[bad] = np.minimum(err[bad], relative_error(analytic[idx[bad]], again[idx[bad]]))
            bad = bad[err[bad] >= tol]
        refined = sorted(int(i) for i in np.setdiff1d(idx[relative_error(analytic[idx], numeric[idx]) >= tol], idx[bad]))
    return float(err.max()), refined


def grad_check(f, params, eps=1e-5, indices=None, value_fn=None):
    """Max relative error between analytic and central-difference gradients.

    ``f(p)`` returns ``(value, gradient)`` for a flat parameter vector ``p``.
    Relative error is |a - n| / max(1e-8, |a| + |n|). ``indices`` restricts
    the check to a subset of coordinates; ``value_fn`` is an optional cheaper
    value-only version of ``f`` used for the finite differences.
    """
    return grad_check_detail(f, params, eps, indices, value_fn)[0]
