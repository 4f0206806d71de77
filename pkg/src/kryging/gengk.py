"""Generalized Golub-Kahan bidiagonalization and the projected solve.

Builds paired bases U (noise-weighted orthogonal, U'U = tau2 I) and V
(covariance-weighted orthonormal, V' Sigma V = I) for the Krylov subspace
of the regularized weighted least-squares problem, together with the
bidiagonal projection B. The regularized latent estimate is recovered
from a small k x k solve and one covariance matvec.

In exact arithmetic the factorization satisfies

    A Sigma V_k = U_{k+1} B_k
    U_{k+1}' U_{k+1} = tau2 I
    V_k' Sigma V_k = I_k

and these identities are the correctness contract tested against dense
oracles. One scaled matvec with Sigma is spent per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mapping import SparseMap
from .toeplitz import BttbOperator

__all__ = ["GenGKFactorization", "KrygingSolution", "gengk_factorize", "solve"]

BREAKDOWN_REL_TOL = 1e-14


@dataclass
class GenGKFactorization:
    """Output of :func:`gengk_factorize`.

    Attributes
    ----------
    k : int
        Effective subspace order (<= requested order on breakdown).
    beta1 : float
        Norm of the right-hand side in the noise metric, ||b||_2 / tau.
    U : ndarray, shape (p, k+1)
        Observation-space basis; the final column is zero if the
        recurrence broke down while computing it.
    V : ndarray, shape (n, k+1)
        Latent-space basis, Sigma-orthonormal; same zero-column rule.
    B : ndarray, shape (k+1, k)
        Bidiagonal projection with diagonals alpha and subdiagonals beta.
    breakdown_at : int or None
        Iteration at which a normalizer vanished, if any.
    """

    k: int
    beta1: float
    U: np.ndarray
    V: np.ndarray
    B: np.ndarray
    breakdown_at: int | None = None

    @property
    def Vk(self) -> np.ndarray:
        return self.V[:, : self.k]


@dataclass
class KrygingSolution:
    """Regularized latent estimate and its projected coefficients.

    ``quad = ||z||^2`` approximates the covariance-weighted quadratic form
    of the latent estimate and feeds straight into the profile likelihood.
    """

    z: np.ndarray
    x_star: np.ndarray
    quad: float
    psi_star: np.ndarray | None = None


def gengk_factorize(
    amap: SparseMap,
    sigma_op: BttbOperator,
    b: np.ndarray,
    tau2: float,
    k: int,
    reorthogonalize: bool = False,
) -> GenGKFactorization:
    """Run k steps of generalized Golub-Kahan bidiagonalization.

    Parameters
    ----------
    amap : SparseMap
        Observation mapping, p x n.
    sigma_op : BttbOperator
        Latent covariance operator (correlation scale; the partial sill
        enters the downstream solve through the regularization).
    b : ndarray, shape (p,)
        Mean-removed observations; must not be all zero.
    tau2 : float
        Nugget variance, > 0.
    k : int
        Requested subspace order, >= 1. Truncated on breakdown.
    reorthogonalize : bool
        Re-orthogonalize new basis vectors against all previous ones
        (U in the noise metric, V in the covariance metric). Off by
        default; the recurrences are self-orthogonalizing in exact
        arithmetic.
    """
    b = np.asarray(b, dtype=float)
    if tau2 <= 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        raise ValueError("right-hand side is identically zero")

    p, n = amap.p, amap.n
    tau = np.sqrt(tau2)
    U = np.zeros((p, k + 1))
    V = np.zeros((n, k + 1))
    SV = np.zeros((n, k + 1)) if reorthogonalize else None  # Sigma @ V columns
    alphas = np.zeros(k + 1)
    betas = np.zeros(k + 1)  # betas[i] = beta_{i+1}

    beta1 = bnorm / tau
    U[:, 0] = b / beta1

    w = amap.apply_t(U[:, 0]) / tau2
    t = sigma_op.matvec(w)
    alpha = np.sqrt(max(np.dot(w, t), 0.0))
    scale = max(beta1, alpha, 1.0)
    tol = BREAKDOWN_REL_TOL * scale
    if alpha <= tol:
        raise ValueError("first basis vector vanished: A^T b is zero")
    alphas[0] = alpha
    V[:, 0] = w / alpha
    sv = t / alpha  # Sigma @ v_i, reused for the next u update
    if reorthogonalize:
        SV[:, 0] = sv

    k_eff = k
    breakdown_at = None
    for i in range(k):
        r = amap.apply(sv) - alphas[i] * U[:, i]
        if reorthogonalize:
            r -= U[:, : i + 1] @ (U[:, : i + 1].T @ r) / tau2
        beta = np.linalg.norm(r) / tau
        if beta <= tol:
            k_eff = i + 1
            breakdown_at = i + 1
            break
        betas[i] = beta
        U[:, i + 1] = r / beta

        w = amap.apply_t(U[:, i + 1]) / tau2 - beta * V[:, i]
        t = sigma_op.matvec(w)
        if reorthogonalize:
            # project out previous V columns in the Sigma inner product;
            # SV.T @ w = V.T Sigma w, and t tracks Sigma w without a new matvec
            coeffs = SV[:, : i + 1].T @ w
            w = w - V[:, : i + 1] @ coeffs
            t = t - SV[:, : i + 1] @ coeffs
        alpha = np.sqrt(max(np.dot(w, t), 0.0))
        if alpha <= tol:
            k_eff = i + 1
            breakdown_at = i + 1
            break
        alphas[i + 1] = alpha
        V[:, i + 1] = w / alpha
        sv = t / alpha
        if reorthogonalize:
            SV[:, i + 1] = sv

    B = np.zeros((k_eff + 1, k_eff))
    for j in range(k_eff):
        B[j, j] = alphas[j]
        B[j + 1, j] = betas[j]
    return GenGKFactorization(
        k=k_eff,
        beta1=beta1,
        U=U[:, : k_eff + 1],
        V=V[:, : k_eff + 1],
        B=B,
        breakdown_at=breakdown_at,
    )


def solve(
    fact: GenGKFactorization,
    sigma2: float,
    sigma_op: BttbOperator,
    amap: SparseMap | None = None,
    b: np.ndarray | None = None,
) -> KrygingSolution:
    """Recover the regularized latent estimate from a factorization.

    Solves the k x k projected ridge system
    (B'B + I/sigma2) z = B' beta1 e1, then maps back with one covariance
    matvec: x* = Sigma (V_k z). When ``amap`` and ``b`` are given, the
    observation-space residual b - A x* is attached to the solution.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    B = fact.B
    k = fact.k
    rhs = B.T @ (fact.beta1 * np.eye(k + 1)[:, 0])
    M = B.T @ B + np.eye(k) / sigma2
    c, low = scipy.linalg.cho_factor(M)
    z = scipy.linalg.cho_solve((c, low), rhs)
    x_star = sigma_op.matvec(fact.Vk @ z)
    psi = b - amap.apply(x_star) if amap is not None and b is not None else None
    return KrygingSolution(z=z, x_star=x_star, quad=float(np.dot(z, z)), psi_star=psi)
