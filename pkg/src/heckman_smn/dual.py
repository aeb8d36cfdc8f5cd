"""Forward-mode dual numbers over numpy arrays.

A :class:`Dual` carries a value of shape ``S`` and a tangent block of shape
``(k,) + S``: ``k`` independent directional derivatives propagated in one
pass. ``k == 1`` is the classic scalar dual number; seeding ``k = d`` unit
directions yields a full gradient in a single evaluation.

The elementary functions in this module (``exp``, ``log``, ...) accept plain
floats, numpy arrays or duals, and the value path is always the same numpy
call so a zero tangent reproduces the plain result bit for bit.
"""
from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "tan")
    # numpy defers binary operators to us instead of building object arrays
    __array_ufunc__ = None

    def __init__(self, val, tan):
        self.val = val
        self.tan = tan

    @classmethod
    def seed(cls, x) -> "Dual":
        """Dual vector whose tangent block is the identity (one direction per entry)."""
        x = np.asarray(x, dtype=float)
        return cls(x, np.eye(x.size).reshape((x.size,) + x.shape))

    @classmethod
    def direction(cls, x, v) -> "Dual":
        """Dual with a single tangent direction ``v``."""
        x = np.asarray(x, dtype=float)
        return cls(x, np.asarray(v, dtype=float).reshape((1,) + x.shape))

    @property
    def k(self) -> int:
        return self.tan.shape[0]

    @property
    def shape(self):
        return np.shape(self.val)

    @property
    def ndim(self) -> int:
        return np.ndim(self.val)

    def __repr__(self):
        return f"Dual({self.val!r}, tan={self.tan!r})"

    def __len__(self):
        return len(self.val)

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return Dual(self.val[key], self.tan[(slice(None),) + key])

    # -- arithmetic ---------------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            val = self.val + other.val
            nd = np.ndim(val)
            return Dual(val, _pad(self.tan, self.ndim, nd) + _pad(other.tan, other.ndim, nd))
        val = self.val + other
        return Dual(val, _broadcast_tan(self, val))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            val = self.val - other.val
            nd = np.ndim(val)
            return Dual(val, _pad(self.tan, self.ndim, nd) - _pad(other.tan, other.ndim, nd))
        val = self.val - other
        return Dual(val, _broadcast_tan(self, val))

    def __rsub__(self, other):
        val = other - self.val
        return Dual(val, -_broadcast_tan(self, val))

    def __mul__(self, other):
        if isinstance(other, Dual):
            val = self.val * other.val
            nd = np.ndim(val)
            tan = _pad(self.tan, self.ndim, nd) * other.val + _pad(other.tan, other.ndim, nd) * self.val
            return Dual(val, tan)
        val = self.val * other
        return Dual(val, _pad(self.tan, self.ndim, np.ndim(val)) * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            val = self.val / other.val
            nd = np.ndim(val)
            tan = (_pad(self.tan, self.ndim, nd) - _pad(other.tan, other.ndim, nd) * val) / other.val
            return Dual(val, tan)
        val = self.val / other
        return Dual(val, _pad(self.tan, self.ndim, np.ndim(val)) / other)

    def __rtruediv__(self, other):
        val = other / self.val
        nd = np.ndim(val)
        return Dual(val, -_pad(self.tan, self.ndim, nd) * (val / self.val))

    def __pow__(self, power):
        if isinstance(power, Dual):
            return exp(power * log(self))
        val = self.val**power
        return Dual(val, self.tan * (power * self.val ** (power - 1)))

    def __rpow__(self, base):
        return exp(self * np.log(base))

    def __rmatmul__(self, mat):
        # mat @ dual for a constant matrix and a dual vector
        val = mat @ self.val
        return Dual(val, self.tan @ np.asarray(mat).T)

    # comparisons act on the value only
    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    def sum(self, axis=None):
        if axis is None:
            return Dual(np.sum(self.val), self.tan.reshape(self.k, -1).sum(axis=1))
        ax = axis if axis < 0 else axis + 1
        return Dual(np.sum(self.val, axis=axis), self.tan.sum(axis=ax))


def _pad(tan, vnd, nd):
    # insert singleton axes after the direction axis so tangents broadcast
    # like their values (numpy aligns trailing axes)
    if vnd == nd:
        return tan
    return tan.reshape(tan.shape[:1] + (1,) * (nd - vnd) + tan.shape[1:])


def _broadcast_tan(d: Dual, val):
    nd = np.ndim(val)
    tan = _pad(d.tan, d.ndim, nd)
    shape = (d.k,) + np.shape(val)
    if tan.shape != shape:
        tan = np.broadcast_to(tan, shape)
    return tan


def value(x):
    """Real part of a dual, or ``x`` unchanged."""
    return x.val if isinstance(x, Dual) else x


def is_dual(*xs) -> bool:
    return any(isinstance(x, Dual) for x in xs)


def chain(val, *pairs):
    """Assemble ``f(args)`` from its value and ``(arg, df/darg)`` partials.

    Non-dual arguments contribute nothing. Returns a plain value when no
    argument is dual.
    """
    tan = None
    nd = np.ndim(val)
    for arg, partial in pairs:
        if not isinstance(arg, Dual):
            continue
        t = _pad(arg.tan, arg.ndim, nd) * partial
        tan = t if tan is None else tan + t
    if tan is None:
        return val
    shape = (tan.shape[0],) + np.shape(val)
    if tan.shape != shape:
        tan = np.broadcast_to(tan, shape)
    return Dual(val, tan)


# -- elementary functions -----------------------------------------------------


def exp(x):
    if isinstance(x, Dual):
        v = np.exp(x.val)
        return Dual(v, x.tan * v)
    return np.exp(x)


def expm1(x):
    if isinstance(x, Dual):
        return Dual(np.expm1(x.val), x.tan * np.exp(x.val))
    return np.expm1(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.tan / x.val)
    return np.log(x)


def log1p(x):
    if isinstance(x, Dual):
        return Dual(np.log1p(x.val), x.tan / (1.0 + x.val))
    return np.log1p(x)


def sqrt(x):
    if isinstance(x, Dual):
        v = np.sqrt(x.val)
        return Dual(v, x.tan * (0.5 / v))
    return np.sqrt(x)


def tanh(x):
    if isinstance(x, Dual):
        v = np.tanh(x.val)
        return Dual(v, x.tan * (1.0 - v * v))
    return np.tanh(x)


def abs(x):  # noqa: A001 - shadows the builtin on purpose inside this namespace
    if isinstance(x, Dual):
        return Dual(np.abs(x.val), x.tan * np.sign(x.val))
    return np.abs(x)


def expit(x):
    """Logistic sigmoid."""
    if isinstance(x, Dual):
        v = _expit(x.val)
        return Dual(v, x.tan * (v * _expit(-x.val)))
    return _expit(x)


def log_expit(x):
    """``log(1 / (1 + exp(-x)))`` without overflow."""
    if isinstance(x, Dual):
        return Dual(_log_expit(x.val), x.tan * _expit(-x.val))
    return _log_expit(x)


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _log_expit(x):
    x = np.asarray(x, dtype=float)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def log_sech2(x):
    """``log(1 - tanh(x)**2)`` accurate for large ``|x|``."""
    if isinstance(x, Dual):
        return Dual(_log_sech2(x.val), x.tan * (-2.0 * np.tanh(x.val)))
    return _log_sech2(x)


def _log_sech2(x):
    a = np.abs(np.asarray(x, dtype=float))
    return 2.0 * (np.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


def where(cond, a, b):
    """Elementwise select; the tangent follows the selected branch."""
    if not (isinstance(a, Dual) or isinstance(b, Dual)):
        return np.where(cond, a, b)
    val = np.where(cond, value(a), value(b))
    nd = np.ndim(val)
    k = a.k if isinstance(a, Dual) else b.k
    ta = _pad(a.tan, a.ndim, nd) if isinstance(a, Dual) else np.zeros((k,) + (1,) * nd)
    tb = _pad(b.tan, b.ndim, nd) if isinstance(b, Dual) else np.zeros((k,) + (1,) * nd)
    return Dual(val, np.where(cond, ta, tb))


def stack(parts):
    """Concatenate 0-d or 1-d pieces (duals or plain) into one vector."""
    if not any(isinstance(p, Dual) for p in parts):
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])
    k = next(p.k for p in parts if isinstance(p, Dual))
    vals, tans = [], []
    for p in parts:
        v = np.atleast_1d(np.asarray(value(p), dtype=float))
        vals.append(v)
        if isinstance(p, Dual):
            tans.append(p.tan.reshape(k, v.size))
        else:
            tans.append(np.zeros((k, v.size)))
    return Dual(np.concatenate(vals), np.concatenate(tans, axis=1))


def dsum(x, axis=None):
    if isinstance(x, Dual):
        return x.sum(axis=axis)
    return np.sum(x, axis=axis)


def scatter(n: int, parts):
    """Build a length-``n`` vector from ``(index_array, values)`` pieces."""
    if not any(isinstance(v, Dual) for _, v in parts):
        out = np.empty(n)
        for idx, v in parts:
            out[idx] = v
        return out
    k = next(v.k for _, v in parts if isinstance(v, Dual))
    val = np.empty(n)
    tan = np.zeros((k, n))
    for idx, v in parts:
        val[idx] = value(v)
        if isinstance(v, Dual):
            tan[:, idx] = v.tan
    return Dual(val, tan)
