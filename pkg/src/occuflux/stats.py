"""Covariance estimation and hypothesis tests on replica samples.

All functions are deterministic in their inputs: no resampling uses a
random generator, so reports are reproducible bit for bit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "InsufficientDataError",
    "CovReport",
    "TestReport",
    "estimate_cov",
    "kolmogorov_sf",
    "ks_normality",
    "increments_test",
    "min_st_test",
]


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TestReport:
    test: str
    statistic: float
    p_or_z: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"test": self.test, "statistic": _jsonable(self.statistic), "p_or_z": _jsonable(self.p_or_z),
                "pass": bool(self.passed), "details": {k: _jsonable(v) for k, v in self.details.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass(frozen=True)
class CovReport:
    """Sample covariance over columns with leave-one-out jackknife errors.

    ``replicates[i]`` is the unbiased covariance with replica ``i`` left out.
    Columns are time-major (t_a, phi_j) pairs when built from samples.
    """

    estimate: np.ndarray
    se: np.ndarray
    n: int
    replicates: np.ndarray = field(repr=False)
    theory: np.ndarray | None = None
    z: np.ndarray | None = None
    times: np.ndarray | None = None
    n_tests: int = 1

    def block(self, phi_index: int = 0):
        """(estimate, se, replicates) restricted to one test function."""
        idx = np.arange(phi_index, self.estimate.shape[0], self.n_tests)
        ix = np.ix_(idx, idx)
        return self.estimate[ix], self.se[ix], self.replicates[(slice(None),) + ix]

    def to_dict(self) -> dict:
        out = {"n": self.n, "estimate": self.estimate.tolist(), "se": self.se.tolist()}
        if self.theory is not None:
            out["theory"] = self.theory.tolist()
            out["z"] = _jsonable(self.z)
        if self.times is not None:
            out["times"] = self.times.tolist()
        return out


def _as_matrix(samples) -> tuple[np.ndarray, np.ndarray | None, int]:
    if isinstance(samples, np.ndarray):
        X = np.asarray(samples, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return X, None, 1
    samples = list(samples)
    first = samples[0]
    keep = first.times > 0
    X = np.stack([s.values[keep] for s in samples]).reshape(len(samples), -1)
    return X, first.times[keep], first.values.shape[1]


def estimate_cov(samples, theory: np.ndarray | None = None, *, min_replicas: int = 30) -> CovReport:
    """Unbiased covariance with jackknife standard errors.

    ``samples`` is a list of OccupationSample (the t = 0 row is dropped,
    being identically zero) or an (n_replicas, n_columns) array.
    """
    X, times, k = _as_matrix(samples)
    n = X.shape[0]
    if n < min_replicas:
        raise InsufficientDataError(f"need at least {min_replicas} replicas, got {n}")
    mean = X.mean(axis=0)
    D = X - mean
    M2 = D.T @ D
    est = M2 / (n - 1)
    # leave-one-out downdate: M2_{-i} = M2 - n/(n-1) d_i d_i^T
    outer = np.einsum("ip,iq->ipq", D, D)
    reps = (M2[None] - (n / (n - 1.0)) * outer) / (n - 2.0)
    dev = reps - reps.mean(axis=0)
    se = np.sqrt((n - 1.0) / n * np.sum(dev * dev, axis=0))
    est = 0.5 * (est + est.T)
    z = None
    if theory is not None:
        theory = np.asarray(theory, dtype=float)
        if theory.shape != est.shape:
            raise ValueError(f"theory matrix shape {theory.shape} != {est.shape}")
        diff = est - theory
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, diff / np.where(se > 0, se, 1.0),
                         np.where(diff == 0, 0.0, np.sign(diff) * np.inf))
    return CovReport(estimate=est, se=se, n=n, replicates=reps, theory=theory, z=z, times=times, n_tests=k)


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """P(K > lam) for the Kolmogorov distribution."""
    if lam <= 0:
        return 1.0
    if lam < 0.2:
        # series converges slowly here; the complement form is exact to double precision
        s = 0.0
        for k in range(1, terms + 1):
            s += math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8.0 * lam * lam))
        return 1.0 - math.sqrt(2.0 * math.pi) / lam * s
    s = 0.0
    for k in range(1, terms + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        s += term if k % 2 else -term
        if term < 1e-300:
            break
    return min(1.0, max(0.0, 2.0 * s))


def ks_normality(values, *, alpha: float = 0.01) -> TestReport:
    """One-sample KS test against N(mean, sd) with plug-in moments."""
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if n < 100:
        raise InsufficientDataError(f"need at least 100 values, got {n}")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("degenerate input: zero variance")
    z = np.sort((x - x.mean()) / sd)
    cdf = ndtr(z)
    i = np.arange(1, n + 1)
    D = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    p = kolmogorov_sf(math.sqrt(n) * D)
    return TestReport("ks_normality", D, p, p > alpha, {"n": n, "mean": float(x.mean()), "sd": float(sd)})


def _increment_columns(samples, phi_index: int):
    if isinstance(samples, np.ndarray):
        return np.asarray(samples, dtype=float)
    return np.stack([s.values[:, phi_index] for s in samples])


def increments_test(samples, *, phi_index: int = 0, indices: Sequence[int] | None = None,
                    level: float = 0.99) -> TestReport:
    """Correlation of X(t2) - X(t1) with X(t4) - X(t3), Fisher-z interval.

    ``samples`` is a list of OccupationSample or an (n, m) array of values
    of one test function on the time grid.  ``indices`` picks t1..t4 (the
    first four grid points by default).
    """
    X = _increment_columns(samples, phi_index)
    if X.shape[1] < 4:
        raise ValueError("grid must have at least 4 points")
    i1, i2, i3, i4 = indices if indices is not None else (0, 1, 2, 3)
    if not i1 < i2 <= i3 < i4:
        raise ValueError("increments must be disjoint and ordered")
    n = X.shape[0]
    if n < 10:
        raise InsufficientDataError(f"need at least 10 replicas, got {n}")
    a = X[:, i2] - X[:, i1]
    b = X[:, i4] - X[:, i3]
    if not (a.std() > 0 and b.std() > 0):
        raise ValueError("degenerate increments: zero variance")
    r = float(np.corrcoef(a, b)[0, 1])
    r_c = min(max(r, -1.0 + 1e-15), 1.0 - 1e-15)
    zr = math.atanh(r_c)
    half = float(ndtri(0.5 + level / 2.0)) / math.sqrt(n - 3)
    lo, hi = math.tanh(zr - half), math.tanh(zr + half)
    zstat = zr * math.sqrt(n - 3)
    return TestReport("increments_test", r, zstat, lo <= 0.0 <= hi,
                      {"n": n, "ci_low": lo, "ci_high": hi, "level": level})


def min_st_test(cov, times: Sequence[float] | None = None, *, se: np.ndarray | None = None,
                phi_index: int = 0, target: float | None = None, target_error: float = 0.0,
                n_se: float = 3.0) -> TestReport:
    """Fit Cov(X_s, X_t) = kappa min(s, t) by least squares on off-diagonal cells.

    ``cov`` is a CovReport (its jackknife replicates give the SE of kappa)
    or a plain matrix with optional ``se``.  Passes when every cell i <= j
    has |residual| <= n_se * SE and, if ``target`` is given,
    |kappa - target| <= n_se * SE(kappa) + target_error.
    """
    reps = None
    if isinstance(cov, CovReport):
        C, S, reps = cov.block(phi_index)
        if times is None:
            times = cov.times
    else:
        C = np.asarray(cov, dtype=float)
        S = np.zeros_like(C) if se is None else np.asarray(se, dtype=float)
    if times is None:
        raise ValueError("time grid required")
    t = np.asarray(times, dtype=float)
    if t.size < 3:
        raise ValueError("grid must have at least 3 times")
    if C.shape != (t.size, t.size):
        raise ValueError(f"covariance block {C.shape} does not match {t.size} times")
    Mn = np.minimum.outer(t, t)
    off = np.triu_indices(t.size, 1)
    w = Mn[off]

    def fit(mat):
        return float(np.dot(mat[off], w) / np.dot(w, w))

    kappa = fit(C)
    kappa_se = 0.0
    if reps is not None:
        n = reps.shape[0]
        kr = np.einsum("ij,nij->n", np.where(np.triu(np.ones_like(Mn), 1) > 0, Mn, 0.0), reps) / np.dot(w, w)
        kappa_se = float(math.sqrt((n - 1.0) / n * np.sum((kr - kr.mean()) ** 2)))
    upper = np.triu_indices(t.size)
    resid = (C - kappa * Mn)[upper]
    floor = 1e-12 * max(1.0, float(np.max(np.abs(C))))
    bound = n_se * S[upper] + floor
    cells_ok = bool(np.all(np.abs(resid) <= bound))
    with np.errstate(divide="ignore", invalid="ignore"):
        worst = float(np.max(np.where(S[upper] > 0, np.abs(resid) / S[upper],
                                      np.where(np.abs(resid) <= floor, 0.0, np.inf))))
    details = {"kappa": kappa, "kappa_se": kappa_se, "max_abs_residual": float(np.max(np.abs(resid))),
               "max_residual_in_se": worst, "cells_pass": cells_ok}
    passed = cells_ok
    zk = math.nan
    if target is not None:
        margin = n_se * kappa_se + target_error
        kappa_ok = abs(kappa - target) <= margin
        zk = (kappa - target) / kappa_se if kappa_se > 0 else (0.0 if kappa == target else math.inf)
        details.update({"target": target, "kappa_pass": kappa_ok})
        passed = passed and kappa_ok
    return TestReport("min_st_test", kappa, zk, passed, details)
