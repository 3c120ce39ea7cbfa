"""Stationary, uniformly elliptic coefficient fields built from a configuration.

Every field depends on a position ``x`` only through the configuration seen
from ``x``; evaluation therefore goes through the un-shifted base frame of the
configuration so that ``evaluate(f, shift(c, z), x) == evaluate(f, c, x + z)``
holds bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidParameterError

KINDS = ("constant_half_identity", "two_phase_by_coverage", "smooth_bump", "constant")


@dataclass(frozen=True)
class FieldSpec:
    """Coefficient field description.

    Parameters
    ----------
    kind : str
        ``constant_half_identity``, ``two_phase_by_coverage``, ``smooth_bump``
        or ``constant`` (a fixed symmetric matrix, for injected anisotropy).
    lam, Lam : float
        Ellipticity bounds checked at construction.
    params : dict
        ``two_phase_by_coverage``: ``alpha1``, ``alpha2``, ``radius``.
        ``smooth_bump``: ``beta``, ``h``.  ``constant``: ``matrix`` or ``scalar``.
    """

    kind: str = "constant_half_identity"
    lam: float = 0.5
    Lam: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown field kind {self.kind!r}")
        if not (self.lam > 0 and self.Lam >= self.lam):
            raise InvalidParameterError("need 0 < lambda <= Lambda")
        lo, hi = self.spectrum_bounds()
        tol = 1e-12 * max(1.0, hi)
        if lo < self.lam - tol or hi > self.Lam + tol:
            raise InvalidParameterError(
                f"field eigenvalues [{lo}, {hi}] fall outside [lambda, Lambda] = [{self.lam}, {self.Lam}]"
            )

    def _p(self, key):
        try:
            return self.params[key]
        except KeyError:
            raise InvalidParameterError(f"field kind {self.kind!r} needs parameter {key!r}") from None

    def spectrum_bounds(self):
        if self.kind == "constant_half_identity":
            return 0.5, 0.5
        if self.kind == "two_phase_by_coverage":
            a1, a2 = float(self._p("alpha1")), float(self._p("alpha2"))
            if not float(self._p("radius")) > 0:
                raise InvalidParameterError("radius must be positive")
            return min(a1, a2), max(a1, a2)
        if self.kind == "smooth_bump":
            beta = float(self._p("beta"))
            if not float(self._p("h")) > 0:
                raise InvalidParameterError("bump width h must be positive")
            return min(0.5, 0.5 + beta), max(0.5, 0.5 + beta)
        if "scalar" in self.params:
            c = float(self.params["scalar"])
            return c, c
        A = np.asarray(self._p("matrix"), dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.array_equal(A, A.T):
            raise InvalidParameterError("constant field matrix must be square and symmetric")
        ev = np.linalg.eigvalsh(A)
        return float(ev[0]), float(ev[-1])

    @property
    def scalar_constant(self):
        """``c`` when the field is the constant ``c I``; otherwise None."""
        if self.kind == "constant_half_identity":
            return 0.5
        if self.kind == "constant":
            if "scalar" in self.params:
                return float(self.params["scalar"])
            A = np.asarray(self.params["matrix"], dtype=float)
            if np.array_equal(A, A[0, 0] * np.eye(len(A))):
                return float(A[0, 0])
        return None


def half_identity():
    return FieldSpec()


def scalar_field(c):
    """Constant field ``c I`` (any dimension; the matrix is sized on evaluation)."""
    return FieldSpec("constant", c, c, {"scalar": float(c)})


def _tree(config):
    """KD-tree over the base-frame points (cached on the configuration)."""
    cache = config._cache
    if "kdtree" not in cache:
        box = config.base_box
        pts = config.base_points
        if box.periodic:
            data = np.mod(pts - box.lo, box.lengths)
            # cKDTree requires points strictly below boxsize
            data = np.where(data >= box.lengths, 0.0, data)
            cache["kdtree"] = cKDTree(data, boxsize=box.lengths)
        else:
            cache["kdtree"] = cKDTree(pts) if len(pts) else None
    return cache["kdtree"]


def _query_frame(config, x):
    xb = config.to_base_frame(x)
    box = config.base_box
    if box.periodic:
        y = np.mod(xb - box.lo, box.lengths)
        return np.where(y >= box.lengths, 0.0, y)
    return xb


def nearest_distance(config, x):
    tree = _tree(config)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if tree is None:
        return np.full(len(x), np.inf)
    dist, _ = tree.query(_query_frame(config, x))
    return dist


def coverage_count(config, x, radius):
    """Number of points strictly within ``radius`` of each ``x``."""
    tree = _tree(config)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if tree is None:
        return np.zeros(len(x), dtype=np.int64)
    r = np.nextafter(float(radius), 0.0)
    return np.asarray(tree.query_ball_point(_query_frame(config, x), r, return_length=True), dtype=np.int64)


def bump(r, h):
    """Smooth compactly supported profile ``exp(1 - 1/(1 - (r/h)^2))`` on ``r < h``; 1 at 0."""
    r = np.asarray(r, dtype=float)
    s = (r / h) ** 2
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
    return out


def scalar_values(spec, config, x):
    """Scalar multiple of the identity at each ``x`` (None for matrix-valued kinds)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = len(x)
    if spec.kind == "constant_half_identity":
        return np.full(n, 0.5)
    if spec.kind == "two_phase_by_coverage":
        cov = coverage_count(config, x, spec.params["radius"])
        return np.where(cov >= 2, float(spec.params["alpha1"]), float(spec.params["alpha2"]))
    if spec.kind == "smooth_bump":
        return 0.5 + float(spec.params["beta"]) * bump(nearest_distance(config, x), float(spec.params["h"]))
    if spec.scalar_constant is not None:
        return np.full(n, spec.scalar_constant)
    return None


def evaluate(spec, config, x):
    """Coefficient matrix at ``x`` (``(d, d)`` for one point, ``(n, d, d)`` for many)."""
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError("evaluation points must be finite")
    d = x.shape[1]
    s = scalar_values(spec, config, x)
    if s is not None:
        out = s[:, None, None] * np.eye(d)
    else:
        A = np.asarray(spec.params["matrix"], dtype=float)
        if A.shape != (d, d):
            raise InvalidParameterError("constant field matrix has the wrong dimension")
        out = np.broadcast_to(A, (len(x), d, d)).copy()
    return out[0] if single else out


def directional(spec, config, x, axis):
    """``<A(x) e_axis, e_axis>`` at each ``x``."""
    s = scalar_values(spec, config, x)
    if s is not None:
        return s
    A = np.asarray(spec.params["matrix"], dtype=float)
    return np.full(len(np.atleast_2d(x)), A[axis, axis])
