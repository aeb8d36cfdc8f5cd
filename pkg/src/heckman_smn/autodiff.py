"""Gradients of the unconstrained log posterior by forward-mode duals.

Two evaluation strategies give the same numbers:

* ``"batched"`` seeds all ``d`` unit directions in one pass (tangent block of
  shape ``(d, ...)``); this is what the sampler uses.
* ``"sweep"`` runs ``d`` separate passes with one direction each.

Each tangent component is propagated by the same rules in both, so they agree
to rounding.
"""
from __future__ import annotations

from typing import Callable, Tuple

import numpy as np

from .dual import Dual
from .sel_model import PriorSpec, SelectionData, log_posterior_unconstrained

MODES = ("batched", "sweep")


def value_and_grad(f: Callable, u, mode: str = "batched") -> Tuple[float, np.ndarray]:
    """Value and gradient of a scalar function written against :mod:`heckman_smn.dual`."""
    u = np.asarray(u, dtype=float)
    if mode == "batched":
        out = f(Dual.seed(u))
        return float(_val(out)), _tan(out, u.size)
    if mode == "sweep":
        g = np.empty(u.size)
        val = None
        for j in range(u.size):
            e = np.zeros(u.size)
            e[j] = 1.0
            out = f(Dual.direction(u, e))
            val = float(_val(out))
            g[j] = _tan(out, 1)[0]
        if val is None:
            val = float(f(u))
        return val, g
    raise ValueError(f"mode must be one of {MODES}")


def _val(out):
    return out.val if isinstance(out, Dual) else out


def _tan(out, k):
    # a function that ignores its input returns a plain value
    if not isinstance(out, Dual):
        return np.zeros(k)
    return np.asarray(out.tan, dtype=float).reshape(k)


def gradient(f: Callable, u, mode: str = "batched") -> np.ndarray:
    return value_and_grad(f, u, mode)[1]


def grad_log_posterior(u, data: SelectionData, spec: PriorSpec = PriorSpec(), family: str = "normal",
                       mode: str = "batched") -> np.ndarray:
    """Exact gradient of the unconstrained log posterior at ``u``."""
    f = lambda v: log_posterior_unconstrained(v, data, spec, family)  # noqa: E731
    return gradient(f, u, mode)


def fd_gradient(u, f: Callable, h: float = 1e-5) -> np.ndarray:
    """Central finite differences ``(f(u + h e_j) - f(u - h e_j)) / 2h``."""
    if not h > 0:
        raise ValueError("h must be > 0")
    u = np.asarray(u, dtype=float)
    g = np.empty(u.size)
    for j in range(u.size):
        up, dn = u.copy(), u.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (float(f(up)) - float(f(dn))) / (2.0 * h)
    return g


def max_relative_error(g, ref) -> float:
    """max_j |g_j - ref_j| / max(1, |ref_j|)."""
    g, ref = np.asarray(g, float), np.asarray(ref, float)
    return float(np.max(np.abs(g - ref) / np.maximum(1.0, np.abs(ref))))
