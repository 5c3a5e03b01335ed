"""Central finite-difference gradients, used as an oracle for the autodiff engine."""
from __future__ import annotations

import numpy as np


def numerical_gradient(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. each array in ``arrays`` (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + h
            fp = f()
            a[i] = orig - h
            fm = f()
            a[i] = orig
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def relative_error(analytic, numeric, floor=1e-12):
    """Worst per-array ``||a - n|| / max(||a||, ||n||, floor)``."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst
