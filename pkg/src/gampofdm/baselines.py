"""Soft LMMSE and genie-tuned LASSO channel estimators, plus the bit-and-
support-genie (BSG) reference.

All three work on the whitened model ``u = A x + n`` with ``cov(n) = I``
obtained from soft symbol estimates.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12
LASSO_TARGETS = (0.9, 1.5)


def dft_matrix(N: int, L: int) -> np.ndarray:
    """Truncated unnormalised DFT, ``Phi[i, j] = exp(-2j*pi*i*j/N)``."""
    i = np.arange(N)[:, None]
    j = np.arange(L)[None, :]
    return np.exp(-2j * np.pi * ((i * j) % N) / N)


@dataclass
class WhitenedModel:
    u: np.ndarray  # (N,)
    A: np.ndarray  # (N, L)
    nuv: np.ndarray  # (N,) pre-whitening noise variances

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def L(self):
        return self.A.shape[1]

    def rows(self, mask) -> "WhitenedModel":
        return WhitenedModel(u=self.u[mask], A=self.A[mask], nuv=self.nuv[mask])


def whiten(y, s_mean, s_var, pdp, noise_var, Phi=None) -> WhitenedModel:
    """Fold symbol uncertainty into the noise and whiten:
    ``nuv = nu_w + sum(pdp) * s_var``, ``u = y / sqrt(nuv)``,
    ``A = Diag(s_mean / sqrt(nuv)) Phi``."""
    y = np.asarray(y)
    N = y.size
    L = np.asarray(pdp).size
    if Phi is None:
        Phi = dft_matrix(N, L)
    nuv = np.maximum(noise_var + float(np.sum(pdp)) * np.asarray(s_var, float), VAR_FLOOR)
    scale = 1.0 / np.sqrt(nuv)
    return WhitenedModel(u=y * scale, A=(s_mean * scale)[:, None] * Phi, nuv=nuv)


def _gain_variances(C: np.ndarray, N: int) -> np.ndarray:
    """``diag(Phi C Phi^H)`` from the diagonal sums of ``C`` via one FFT."""
    L = C.shape[0]
    jj, kk = np.indices((L, L))
    d = (jj - kk).ravel()
    c = np.zeros(N, dtype=complex)
    np.add.at(c, d % N, C.ravel())
    return np.maximum(np.fft.fft(c).real, 0.0)


def gaussian_mmse(model: WhitenedModel, prior_var):
    """``x = D A^H (A D A^H + I)^-1 u`` with ``D = Diag(prior_var)``, computed in
    the L x L form. Returns ``(xhat, posterior covariance)``."""
    sq = np.sqrt(np.asarray(prior_var, float))
    B = model.A * sq[None, :]
    G = B.conj().T @ B
    G[np.diag_indices_from(G)] += 1.0
    rhs = B.conj().T @ model.u
    try:
        Gi = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        log.warning("LMMSE solve failed; retrying with regularisation")
        G[np.diag_indices_from(G)] += 1e-9
        Gi = np.linalg.inv(G)
    xhat = sq * (Gi @ rhs)
    C = sq[:, None] * Gi * sq[None, :]
    return xhat, C


@dataclass
class SoftChannel:
    xhat: np.ndarray
    zhat: np.ndarray
    nuz: np.ndarray
    info: dict | None = None


def lmmse_equalize(model: WhitenedModel, pdp, N: int | None = None) -> SoftChannel:
    """Soft LMMSE tap estimate and the implied subcarrier-gain means and
    variances."""
    N = model.N if N is None else N
    xhat, C = gaussian_mmse(model, pdp)
    zhat = np.fft.fft(xhat, n=N)
    return SoftChannel(xhat=xhat, zhat=zhat, nuz=_gain_variances(C, N))


def _soft(v, t):
    mag = np.abs(v)
    return np.where(mag > t, (1.0 - t / np.maximum(mag, 1e-300)) * v, 0.0)


def fista_l1(G, b, tau, x0=None, lip=None, max_iters=500, tol=1e-7):
    """Monotone FISTA for ``0.5 x^H G x - Re(b^H x) + tau ||x||_1`` (the
    Gram form of ``0.5 ||u - A x||^2 + tau ||x||_1``)."""
    if lip is None:
        lip = float(np.linalg.eigvalsh(G).max())
    x = np.zeros_like(b) if x0 is None else x0.copy()

    def obj(v):
        return 0.5 * np.real(np.vdot(v, G @ v)) - np.real(np.vdot(b, v)) + tau * np.abs(v).sum()

    f = obj(x)
    yk, t = x.copy(), 1.0
    for _ in range(max_iters):
        z = _soft(yk - (G @ yk - b) / lip, tau / lip)
        fz = obj(z)
        x_prev = x
        if fz <= f:
            x, f = z, fz
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        yk = x + (t / t_new) * (z - x) + ((t - 1) / t_new) * (x - x_prev)
        t = t_new
        if np.linalg.norm(x - x_prev) <= tol * max(np.linalg.norm(x), 1e-12):
            break
    return x


def lasso_residual_target(model: WhitenedModel, target: float, rel_tol: float = 0.02,
                          max_bisect: int = 40):
    """L1-minimal estimate whose per-sample residual ``||u - A x||^2 / N``
    meets ``target`` within ``rel_tol``.

    Returns ``(xhat, residual, ok)``; ``ok`` is False when the target is not
    met (solver fell back to the closest iterate).
    """
    u, A = model.u, model.A
    Nr = u.size
    uu = float(np.real(np.vdot(u, u)))
    if uu / Nr <= target:
        return np.zeros(A.shape[1], dtype=complex), uu / Nr, True
    G = A.conj().T @ A
    b = A.conj().T @ u
    lip = float(np.linalg.eigvalsh(G).max())

    def resid(x):
        return (uu - 2 * np.real(np.vdot(b, x)) + np.real(np.vdot(x, G @ x))) / Nr

    tau_hi = float(np.abs(b).max())
    lo, hi = np.log(tau_hi * 1e-8), np.log(tau_hi)
    x = np.zeros_like(b)
    best = (np.inf, x, uu / Nr)
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        x = fista_l1(G, b, np.exp(mid), x0=x, lip=lip)
        r = resid(x)
        err = abs(r - target) / target
        if err < best[0]:
            best = (err, x.copy(), r)
        if err <= rel_tol:
            return x, r, True
        if r > target:
            hi = mid
        else:
            lo = mid
    return best[1], best[2], False


def lasso_equalize(model: WhitenedModel, true_x, N: int | None = None,
                   targets=LASSO_TARGETS) -> SoftChannel:
    """Genie-selected LASSO: solve for each residual target and keep the
    estimate with the smaller tap MSE. Gains get the isotropic variance
    ``L * mse``."""
    N = model.N if N is None else N
    L = model.L
    cands = []
    for t in targets:
        x, r, ok = lasso_residual_target(model, t)
        mse = float(np.mean(np.abs(np.asarray(true_x) - x) ** 2))
        cands.append((mse, x, r, ok, t))
    mse, x, r, ok, t = min(cands, key=lambda c: c[0])
    if not ok:
        log.debug("LASSO residual target %.2f not met (got %.3f)", t, r)
    zhat = np.fft.fft(x, n=N)
    return SoftChannel(xhat=x, zhat=zhat, nuz=np.full(N, L * mse),
                       info=dict(mse=mse, target=t, residual=r, ok=ok))


def bsg_bound(y, symbols, states, prior, noise_var, true_x=None):
    """Bit-and-support genie: Gaussian MMSE with exact symbols and per-lag
    variance ``nu^{d_j}_j``. Returns ``(xhat, nmse)`` (``nmse`` is None
    without ``true_x``)."""
    states = np.asarray(states)
    var = np.where(states == 1, prior.nu1, prior.nu0)
    model = whiten(y, symbols, np.zeros(len(y)), var, noise_var)
    xhat, _ = gaussian_mmse(model, var)
    nmse = None
    if true_x is not None:
        tx = np.asarray(true_x)
        nmse = float(np.sum(np.abs(tx - xhat) ** 2) / np.sum(np.abs(tx) ** 2))
    return xhat, nmse
