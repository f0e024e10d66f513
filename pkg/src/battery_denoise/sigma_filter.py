"""Unscented Kalman filter over an arbitrary transition/measurement pair.

The sigma points come from the scaled unscented transform. Every operation
takes plain values and returns new ones with no state carried between calls, so
a filter run is just a fold of :func:`predict` and :func:`update` over the
measurement sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Protocol, Sequence

import numpy as np

__all__ = [
    "FilterError",
    "FactorizationFailure",
    "SingularInnovation",
    "StateEstimate",
    "UkfConfig",
    "SigmaSet",
    "FilterRun",
    "psd_sqrt",
    "generate_sigma_points",
    "predict",
    "update",
    "run_filter",
]

JITTER_LADDER = tuple(10.0 ** e for e in range(-12, -5))  # 1e-12 .. 1e-6
PIVOT_RTOL = 1e-12


class FilterError(ArithmeticError):
    """Numerical failure inside the filter.

    ``index`` is the sample at which the failure occurred, when known.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class FactorizationFailure(FilterError):
    """Covariance could not be square-rooted even after maximum jitter."""


class SingularInnovation(FilterError):
    """Innovation covariance is singular to working precision."""


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


@dataclass(frozen=True, eq=False)
class StateEstimate:
    """Mean and covariance of the filter state.

    ``jitter`` records the diagonal loading that was needed to factor the
    covariance while producing this estimate (0 when none was needed).
    """

    mean: np.ndarray
    covariance: np.ndarray
    jitter: float = field(default=0.0, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"covariance shape {cov.shape} does not match state length {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def n(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class UkfConfig:
    """Sigma-point tuning plus noise covariances and the initial state.

    Parameters
    ----------
    process_noise_cov : (n, n) array
        Additive process noise covariance Q.
    measurement_noise_cov : (m, m) array
        Additive measurement noise covariance R.
    initial_state : (n,) array
    initial_cov : (n, n) array
    alpha, beta, kappa : float
        Scaled unscented transform parameters.
    """

    process_noise_cov: np.ndarray
    measurement_noise_cov: np.ndarray
    initial_state: np.ndarray
    initial_cov: np.ndarray
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        x0 = np.array(self.initial_state, dtype=float).reshape(-1)
        Q = np.atleast_2d(np.array(self.process_noise_cov, dtype=float))
        R = np.atleast_2d(np.array(self.measurement_noise_cov, dtype=float))
        P0 = np.atleast_2d(np.array(self.initial_cov, dtype=float))
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "process_noise_cov", Q)
        object.__setattr__(self, "measurement_noise_cov", R)
        object.__setattr__(self, "initial_cov", P0)

        n = x0.size
        if n < 1:
            raise ValueError("state dimension must be at least 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if n + self.kappa <= 0:
            raise ValueError(f"n + kappa must be positive, got {n + self.kappa}")
        for name, mat, dim in (("process_noise_cov", Q, n), ("initial_cov", P0, n),
                               ("measurement_noise_cov", R, None)):
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
                raise ValueError(f"{name} must be a non-empty square matrix")
            if dim is not None and mat.shape[0] != dim:
                raise ValueError(f"{name} must be {dim}x{dim}, got {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} has non-finite entries")
            if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(mat).min() < -1e-12 * max(1.0, np.abs(mat).max()):
                raise ValueError(f"{name} must be positive semidefinite")

    @property
    def n(self) -> int:
        return self.initial_state.size

    @property
    def m(self) -> int:
        return self.measurement_noise_cov.shape[0]

    @property
    def lam(self) -> float:
        return self.alpha**2 * (self.n + self.kappa) - self.n

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance weights for the 2n+1 sigma points."""
        return self._weights

    @cached_property
    def _weights(self) -> tuple[np.ndarray, np.ndarray]:
        n, lam = self.n, self.lam
        c = n + lam
        wm = np.full(2 * n + 1, 0.5 / c)
        wc = wm.copy()
        wm[0] = lam / c
        wc[0] = lam / c + (1.0 - self.alpha**2 + self.beta)
        wm.setflags(write=False)
        wc.setflags(write=False)
        return wm, wc

    def initial_estimate(self) -> StateEstimate:
        return StateEstimate(self.initial_state, self.initial_cov)


@dataclass(frozen=True, eq=False)
class SigmaSet:
    """Sigma points (one per row) and their weights."""

    points: np.ndarray
    weights_mean: np.ndarray
    weights_cov: np.ndarray
    jitter: float = 0.0


def _semidefinite_cholesky(a: np.ndarray) -> np.ndarray | None:
    """Lower factor of a PSD matrix that tolerates exactly-zero pivots.

    Returns None if ``a`` is not PSD to within a relative tolerance.
    """
    n = a.shape[0]
    scale = float(np.abs(np.diag(a)).max()) if n else 0.0
    L = np.zeros_like(a)
    if scale == 0.0:
        return L if not np.any(a) else None
    tol = 1e-13 * scale
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        col = a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]
        if d > tol:
            L[j, j] = np.sqrt(d)
            L[j + 1:, j] = col / L[j, j]
        elif d >= -tol and np.all(np.abs(col) <= tol):
            continue
        else:
            return None
    return L


def psd_sqrt(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower-triangular square root of a symmetric PSD matrix.

    The matrix is symmetrized first. When factorization fails, ``eps * I`` is
    added with eps climbing 1e-12, 1e-11, ..., 1e-6.

    Returns
    -------
    L : ndarray
        Factor with ``L @ L.T`` equal to the (possibly jittered) input.
    jitter : float
        The eps that was applied, 0.0 if none.

    Raises
    ------
    FactorizationFailure
        If the last rung of the jitter ladder still fails.
    """
    a = _symmetrize(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise FactorizationFailure("covariance has non-finite entries")
    try:
        return np.linalg.cholesky(a), 0.0
    except np.linalg.LinAlgError:
        pass
    L = _semidefinite_cholesky(a)
    if L is not None:
        return L, 0.0
    eye = np.eye(a.shape[0])
    for eps in JITTER_LADDER:
        try:
            return np.linalg.cholesky(a + eps * eye), eps
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailure(
        f"covariance not factorable after jitter {JITTER_LADDER[-1]:g}; "
        f"min eigenvalue {np.linalg.eigvalsh(a).min():.3e}"
    )


def generate_sigma_points(est: StateEstimate, cfg: UkfConfig) -> SigmaSet:
    """Scaled sigma points for ``est``.

    Row 0 is the mean itself; rows 1..n and n+1..2n are the mean plus and
    minus the columns of the factor of ``(n + lambda) * P``.
    """
    n = est.n
    if n != cfg.n:
        raise ValueError(f"estimate has dimension {n}, config expects {cfg.n}")
    L, jitter = psd_sqrt((n + cfg.lam) * est.covariance)
    pts = np.empty((2 * n + 1, n))
    pts[0] = est.mean
    pts[1:n + 1] = est.mean + L.T
    # Mirror the realised offsets rather than L itself so each +/- pair is
    # exactly symmetric about the mean after rounding.
    pts[n + 1:] = est.mean - (pts[1:n + 1] - est.mean)
    wm, wc = cfg.weights()
    return SigmaSet(pts, wm, wc, jitter)


def _moments(Y: np.ndarray, wm: np.ndarray, wc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Offsetting by the centre image keeps the large, opposite-signed weights
    # of small alpha from cancelling catastrophically.
    mean = Y[0] + wm[1:] @ (Y[1:] - Y[0])
    D = Y - mean
    return mean, (D.T * wc) @ D


def unscented_transform(sig: SigmaSet, func: Callable[[np.ndarray], np.ndarray]
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Push sigma points through ``func``; return (images, mean, covariance)."""
    Y = np.array([np.atleast_1d(func(p)) for p in sig.points], dtype=float)
    mean, cov = _moments(Y, sig.weights_mean, sig.weights_cov)
    return Y, mean, cov


def predict(est: StateEstimate, cfg: UkfConfig,
            f: Callable[[np.ndarray, Any], np.ndarray], inputs: Any = None) -> StateEstimate:
    """Time update through the transition ``f(x, inputs)`` plus additive Q."""
    sig = generate_sigma_points(est, cfg)
    _, mean, cov = unscented_transform(sig, lambda x: f(x, inputs))
    cov = _symmetrize(cov + cfg.process_noise_cov)
    return StateEstimate(mean, cov, sig.jitter)


def update(pred: StateEstimate, cfg: UkfConfig,
           h: Callable[[np.ndarray], np.ndarray], z) -> StateEstimate:
    """Measurement update of ``pred`` with observation ``z``.

    Raises
    ------
    SingularInnovation
        When a Cholesky pivot of the innovation covariance falls below
        1e-12 times its largest diagonal entry.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size != cfg.m:
        raise ValueError(f"measurement has length {z.size}, expected {cfg.m}")
    sig = generate_sigma_points(pred, cfg)
    Z, zhat, Pzz = unscented_transform(sig, h)
    S = _symmetrize(Pzz + cfg.measurement_noise_cov)

    dX = sig.points - pred.mean
    Pxz = (dX.T * sig.weights_cov) @ (Z - zhat)

    try:
        Ls = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SingularInnovation("innovation covariance is not positive definite") from None
    pivots = np.diag(Ls) ** 2
    if pivots.min() < PIVOT_RTOL * np.diag(S).max():
        raise SingularInnovation(
            f"innovation pivot {pivots.min():.3e} below threshold"
        )
    Kt = np.linalg.solve(S, Pxz.T)
    K = Kt.T

    mean = pred.mean + K @ (z - zhat)
    cov = _symmetrize(pred.covariance - K @ S @ Kt)
    return StateEstimate(mean, cov, sig.jitter)


class StateSpaceModel(Protocol):
    def transition(self, x: np.ndarray, inputs: Any) -> np.ndarray: ...

    def measure(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(eq=False)
class FilterRun:
    """Posterior means ``(N, n)`` and covariances ``(N, n, n)`` per sample."""

    means: np.ndarray
    covariances: np.ndarray
    jitter_events: int = 0

    def __len__(self) -> int:
        return len(self.means)


def run_filter(cfg: UkfConfig, model: StateSpaceModel, measurements: Sequence,
               inputs: Sequence | None = None) -> FilterRun:
    """Filter a whole measurement sequence.

    The configured initial state is the prior at the first sample, so sample 0
    gets a measurement update only. Every later sample k gets a predict driven
    by ``inputs[k - 1]`` (the exogenous values held over the interval) and
    then an update with ``measurements[k]``.

    Errors from the inner steps are re-raised with ``index`` set to the
    failing sample.
    """
    N = len(measurements)
    if inputs is not None and len(inputs) != N:
        raise ValueError(f"{len(inputs)} input records for {N} measurements")
    n = cfg.n
    means = np.empty((N, n))
    covs = np.empty((N, n, n))
    jitter_events = 0
    est = cfg.initial_estimate()
    for k in range(N):
        try:
            if k > 0:
                est = predict(est, cfg, model.transition,
                              None if inputs is None else inputs[k - 1])
                jitter_events += est.jitter > 0
            est = update(est, cfg, model.measure, measurements[k])
            jitter_events += est.jitter > 0
        except FilterError as exc:
            raise type(exc)(f"sample {k}: {exc}", index=k) from exc
        means[k] = est.mean
        covs[k] = est.covariance
    return FilterRun(means, covs, jitter_events)
