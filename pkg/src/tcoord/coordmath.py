"""Coordination-error algebra and closed-form convergence constants."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


class BoundDegenerateWarning(UserWarning):
    """delta'^n is below double precision; k and lambda lose all information."""


def build_q(n: int) -> np.ndarray:
    """Orthonormal ``(n-1) x n`` matrix whose nullspace is spanned by ones.

    Built by the recursion ``Q_k = [[sqrt((k-1)/k), -1/sqrt(k(k-1)) 1^T],
    [0, Q_{k-1}]]`` starting from ``Q_2 = [1/sqrt2, -1/sqrt2]``.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    q = np.array([[1.0, -1.0]]) / math.sqrt(2.0)
    for k in range(3, n + 1):
        top = np.empty((1, k))
        top[0, 0] = math.sqrt((k - 1) / k)
        top[0, 1:] = -1.0 / math.sqrt(k * (k - 1))
        bottom = np.hstack([np.zeros((k - 2, 1)), q])
        q = np.vstack([top, bottom])
    return q


def diam(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("diam of an empty vector")
    return float(x.max() - x.min())


@dataclass(frozen=True)
class CoordErrorState:
    xi1: np.ndarray
    xi2: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.xi1, self.xi2])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.stacked))


def coordination_error(gamma, gamma_dot, gamma_dot_d: float, q: np.ndarray) -> CoordErrorState:
    gamma = np.asarray(gamma, dtype=float)
    gamma_dot = np.asarray(gamma_dot, dtype=float)
    n = q.shape[1]
    if gamma.shape != (n,) or gamma_dot.shape != (n,):
        raise ValueError(
            f"expected vectors of length {n}, got {gamma.shape} and {gamma_dot.shape}"
        )
    return CoordErrorState(q @ gamma, gamma_dot - gamma_dot_d)


def chi_transform(e: CoordErrorState, b: float, q: np.ndarray) -> np.ndarray:
    if e.xi1.shape != (q.shape[0],) or e.xi2.shape != (q.shape[1],):
        raise ValueError("error state does not match Q dimensions")
    return b * e.xi1 + q @ e.xi2


@dataclass(frozen=True)
class ConsensusConstants:
    delta_prime: float
    k: float
    lam: float


def consensus_constants(n: int, T: float, delta: float, a: float, b: float) -> ConsensusConstants:
    """Exponential consensus envelope ``diam(x(t)) <= diam(x0) k exp(-lam t)``."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not T > 0.0:
        raise ValueError(f"T must be positive, got {T}")
    if not 0.0 < delta <= T:
        raise ValueError(f"delta must lie in (0, T], got delta={delta}, T={T}")
    if not (a > 0.0 and b > 0.0):
        raise ValueError(f"gains must be positive, got a={a}, b={b}")
    r = a / b
    dp = min(1.0, r * delta) * math.exp(-(n - 1) * r * T)
    dpn = dp**n
    if dpn < np.finfo(float).eps:
        warnings.warn(
            f"bound degenerate: delta'^n = {dpn:.3e} is below machine epsilon "
            f"(n={n}, T={T}, delta={delta}, a/b={r})",
            BoundDegenerateWarning,
            stacklevel=2,
        )
    k = 1.0 / (1.0 - dpn)
    # log1p keeps lam accurate when delta'^n is tiny
    lam = -math.log1p(-dpn) / (n * T)
    return ConsensusConstants(dp, k, lam)


@dataclass(frozen=True)
class ConvergenceConstants:
    n: int
    delta_prime: float
    k: float
    lam: float
    k_phi: float
    lambda_tc_max: float
    lambda_tc: float
    c1: float
    c2: float
    c3: float
    c4: float
    beta: float
    s_norm: float
    s_inv_norm: float
    kappa1: float
    kappa2: float

    def to_dict(self) -> dict:
        return asdict(self)


def s_matrix(b: float, q: np.ndarray) -> np.ndarray:
    m, n = q.shape
    return np.block([[b * np.eye(m), q], [np.zeros((n, m)), np.eye(n)]])


def spectral_norm(m: np.ndarray) -> float:
    return float(np.linalg.svd(m, compute_uv=False)[0])


def iss_bounds(
    n: int,
    T: float,
    delta: float,
    a: float,
    b: float,
    c3: float = 1.0,
    beta: Optional[float] = None,
    lambda_tc: Optional[float] = None,
) -> ConvergenceConstants:
    """Constants of the ISS estimate for the coordination error.

    ``c4`` is tied to ``c3``; ``beta`` defaults to ``2 * c1`` and
    ``lambda_tc`` to its admissible maximum ``lam / (6 n k^2)``.
    """
    if not c3 > 0.0:
        raise ValueError(f"c3 must be positive, got {c3}")
    cc = consensus_constants(n, T, delta, a, b)
    if cc.lam <= 0.0:
        raise ValueError("consensus rate is zero; ISS constants are undefined")
    k_phi = math.sqrt(2 * n) * cc.k
    cap = cc.lam / (6 * n * cc.k**2)
    if lambda_tc is None:
        lambda_tc = cap
    if not lambda_tc > 0.0:
        raise ValueError(f"lambda_tc must be positive, got {lambda_tc}")
    if lambda_tc > cap:
        raise ValueError(f"lambda_tc={lambda_tc} exceeds the admissible cap {cap}")
    c4 = c3
    c1 = b * c3 / (2 * a * n)
    c2 = k_phi**2 * c4 / (2 * cc.lam)
    if beta is None:
        beta = 2.0 * c1
    if not beta > 0.0:
        raise ValueError(f"beta must be positive, got {beta}")

    S = s_matrix(b, build_q(n))
    s_norm = spectral_norm(S)
    s_inv_norm = spectral_norm(np.linalg.inv(S))
    lo = min(c1, beta / 2)
    ratio = math.sqrt(max(c2, beta / 2) / lo)
    kappa1 = s_inv_norm * ratio * s_norm
    kappa2 = s_inv_norm * ratio * (k_phi**2 * c3 / cc.lam + beta) / (lambda_tc * lo)
    return ConvergenceConstants(
        n=n,
        delta_prime=cc.delta_prime,
        k=cc.k,
        lam=cc.lam,
        k_phi=k_phi,
        lambda_tc_max=cap,
        lambda_tc=lambda_tc,
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        beta=beta,
        s_norm=s_norm,
        s_inv_norm=s_inv_norm,
        kappa1=kappa1,
        kappa2=kappa2,
    )
