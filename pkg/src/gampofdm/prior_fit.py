"""Fitting the lag-dependent GM2-HMM tap prior from tap realizations.

Two stages, as in the channel study: an EM fit of the per-lag two-component
complex Gaussian mixture, then transition counting on MAP state estimates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12


@dataclass
class Gm2HmmPrior:
    lam: np.ndarray
    nu0: np.ndarray
    nu1: np.ndarray
    p01: np.ndarray
    p10: np.ndarray

    def __post_init__(self):
        for name in ("lam", "nu0", "nu1", "p01", "p10"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        L = self.lam.size
        if any(getattr(self, n).shape != (L,) for n in ("nu0", "nu1", "p01", "p10")):
            raise ValueError("all prior arrays must have the same length")

    @property
    def L(self) -> int:
        return self.lam.size

    @property
    def pdp(self) -> np.ndarray:
        """Implied power-delay profile ``E|x_j|^2``."""
        return self.lam * self.nu1 + (1.0 - self.lam) * self.nu0

    def consistency_residual(self) -> np.ndarray:
        pred = self.lam[:-1] * (1 - self.p01[:-1]) + (1 - self.lam[:-1]) * self.p10[:-1]
        return np.abs(self.lam[1:] - pred)

    def validate(self, tol: float = 1e-3) -> None:
        if np.any(self.nu1 <= self.nu0):
            raise ValueError("need nu1 > nu0 at every lag")
        for n in ("lam", "p01", "p10"):
            v = getattr(self, n)
            if np.any((v < 0) | (v > 1)):
                raise ValueError(f"{n} outside [0, 1]")
        if self.L > 1 and self.consistency_residual().max() > tol:
            raise ValueError("lambda inconsistent with switching probabilities")

    @classmethod
    def iid_gaussian(cls, pdp) -> "Gm2HmmPrior":
        """Rayleigh taps: every lag in the big state with variance ``pdp``."""
        pdp = np.asarray(pdp, float)
        L = pdp.size
        return cls(lam=np.ones(L), nu0=pdp * 1e-3, nu1=pdp, p01=np.zeros(L), p10=np.ones(L))


def _cn_logpdf(abs2, var):
    return -np.log(np.pi * var) - abs2 / var


def _posterior(abs2, lam, nu0, nu1):
    """``omega[j, u] = Pr{d=1 | x}`` and the per-lag log likelihood."""
    with np.errstate(divide="ignore"):
        l1 = np.log(lam)[:, None] + _cn_logpdf(abs2, nu1[:, None])
        l0 = np.log1p(-lam)[:, None] + _cn_logpdf(abs2, nu0[:, None])
    tot = np.logaddexp(l0, l1)
    omega = np.exp(l1 - tot)
    return omega, tot.sum(axis=1)


@dataclass
class EmFit:
    lam: np.ndarray
    nu0: np.ndarray
    nu1: np.ndarray
    omega: np.ndarray  # (L, U) state posterior table
    loglik: list = field(default_factory=list)  # per-iteration (L,) arrays
    n_iter: int = 0
    degenerate: np.ndarray | None = None


def em_fit_gm2(realizations, init=None, max_iters: int = 500, tol: float = 1e-8,
               floor: float = VAR_FLOOR) -> EmFit:
    """EM for the per-lag mixture ``(1-lam) CN(0, nu0) + lam CN(0, nu1)``.

    ``realizations`` is ``(U, L)`` complex. ``init`` is an optional
    ``(lam, nu0, nu1)`` triple; by default ``lam = 0.5``, ``nu1 = 2 * pdp``,
    ``nu0 = 0.02 * pdp``. Stops when the largest absolute parameter change
    (variances relative to the lag's mean energy) is below ``tol``.
    """
    x = np.asarray(realizations)
    if x.ndim != 2:
        raise ValueError("realizations must be (U, L)")
    abs2 = (np.abs(x) ** 2).T  # (L, U)
    L, U = abs2.shape
    pdp = abs2.mean(axis=1)
    degenerate = pdp <= floor
    scale = np.where(degenerate, 1.0, pdp)
    if init is None:
        lam = np.full(L, 0.5)
        nu1 = 2.0 * pdp
        nu0 = 0.02 * pdp
    else:
        lam, nu0, nu1 = (np.array(v, dtype=float) * np.ones(L) for v in init)
    nu0 = np.maximum(nu0, floor)
    nu1 = np.maximum(nu1, floor)
    fit = EmFit(lam=lam, nu0=nu0, nu1=nu1, omega=None, degenerate=degenerate)
    omega, ll = _posterior(abs2, lam, nu0, nu1)
    fit.loglik.append(ll)
    for it in range(1, max_iters + 1):
        w1 = omega.sum(axis=1)
        w0 = U - w1
        with np.errstate(invalid="ignore", divide="ignore"):
            new_nu1 = np.where(w1 > 0, (omega * abs2).sum(axis=1) / w1, nu1)
            new_nu0 = np.where(w0 > 0, ((1 - omega) * abs2).sum(axis=1) / w0, nu0)
        new_nu1 = np.maximum(new_nu1, floor)
        new_nu0 = np.maximum(new_nu0, floor)
        new_lam = w1 / U
        change = np.max(np.concatenate([
            np.abs(new_lam - lam),
            np.abs(new_nu0 - nu0) / scale,
            np.abs(new_nu1 - nu1) / scale,
        ]))
        lam, nu0, nu1 = new_lam, new_nu0, new_nu1
        omega, ll = _posterior(abs2, lam, nu0, nu1)
        fit.loglik.append(ll)
        fit.n_iter = it
        if not change > tol:
            break
    # label-swap guard
    swap = nu0 > nu1
    if np.any(swap):
        lam = np.where(swap, 1 - lam, lam)
        nu0, nu1 = np.where(swap, nu1, nu0), np.where(swap, nu0, nu1)
        omega = np.where(swap[:, None], 1 - omega, omega)
    if np.any(degenerate):
        log.warning("degenerate (zero-energy) lags: %s", np.flatnonzero(degenerate).tolist())
        lam = np.where(degenerate, 0.0, lam)
        nu0 = np.where(degenerate, floor, nu0)
        nu1 = np.where(degenerate, floor * 10, nu1)
        omega = np.where(degenerate[:, None], 0.0, omega)
    # nu1 must strictly exceed nu0 for the prior to be usable
    nu1 = np.maximum(nu1, nu0 * (1 + 1e-9) + floor)
    fit.lam, fit.nu0, fit.nu1, fit.omega = lam, nu0, nu1, omega
    return fit


@dataclass
class SwitchingEstimate:
    p01: np.ndarray
    p10: np.ndarray
    flagged01: np.ndarray
    flagged10: np.ndarray


def _fill_flagged(p, bad, default=0.5):
    p = p.copy()
    good = np.flatnonzero(~bad)
    if good.size == 0:
        p[:] = default
        return p
    for j in np.flatnonzero(bad):
        p[j] = p[good[np.argmin(np.abs(good - j))]]
    return p


def state_posteriors(realizations, prior: Gm2HmmPrior) -> np.ndarray:
    """``(L, U)`` table of ``Pr{d_j = 1 | x_j}`` under the per-lag mixture
    (the chain is ignored)."""
    x = np.atleast_2d(np.asarray(realizations))
    omega, _ = _posterior((np.abs(x) ** 2).T, prior.lam, prior.nu0, prior.nu1)
    return omega


def map_states(omega) -> np.ndarray:
    return np.floor(np.asarray(omega) + 0.5).astype(np.int8)


def estimate_switching_probs(omega) -> SwitchingEstimate:
    """Empirical transition ratios from MAP states ``floor(omega + 0.5)``.

    ``omega`` is ``(L, U)``. Lags whose conditioning count is zero take the
    nearest valid lag's value and are flagged; the last lag copies lag
    ``L - 2``.
    """
    d = map_states(omega)
    L = d.shape[0]
    p01 = np.zeros(L)
    p10 = np.zeros(L)
    bad01 = np.zeros(L, bool)
    bad10 = np.zeros(L, bool)
    if L < 2:
        return SwitchingEstimate(p01, p10, ~bad01, ~bad10)
    cur, nxt = d[:-1], d[1:]
    n1 = (cur == 1).sum(axis=1)
    n0 = (cur == 0).sum(axis=1)
    c10 = ((cur == 1) & (nxt == 0)).sum(axis=1)
    c01 = ((cur == 0) & (nxt == 1)).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p01[:-1] = np.where(n1 > 0, c10 / np.maximum(n1, 1), 0.0)
        p10[:-1] = np.where(n0 > 0, c01 / np.maximum(n0, 1), 0.0)
    bad01[:-1] = n1 == 0
    bad10[:-1] = n0 == 0
    p01[-1], p10[-1] = p01[-2], p10[-2]
    bad01[-1], bad10[-1] = bad01[-2], bad10[-2]
    if bad01.any():
        p01 = _fill_flagged(p01, bad01)
    if bad10.any():
        p10 = _fill_flagged(p10, bad10)
    return SwitchingEstimate(p01, p10, bad01, bad10)


def conditional_correlation(realizations, states, min_pairs: int = 10):
    """Normalised correlation of ``x[j+1]`` with ``x[j]`` over realizations in
    which both MAP states are big.

    ``realizations`` is ``(U, L)``, ``states`` is ``(L, U)``. Returns a length
    ``L - 1`` complex array with NaN where fewer than ``min_pairs`` pairs
    qualify.
    """
    x = np.asarray(realizations).T
    d = np.asarray(states)
    both = (d[1:] == 1) & (d[:-1] == 1)
    num = np.sum(both * x[1:] * np.conj(x[:-1]), axis=1)
    e1 = np.sum(both * np.abs(x[1:]) ** 2, axis=1)
    e0 = np.sum(both * np.abs(x[:-1]) ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = num / np.sqrt(e1 * e0)
    rho = np.where((both.sum(axis=1) >= min_pairs) & (e1 * e0 > 0), rho, np.nan + 0j)
    return rho


def enforce_consistency(prior: Gm2HmmPrior) -> Gm2HmmPrior:
    """Recompute ``lam[1:]`` from ``lam[0]`` and the switching probabilities."""
    lam = prior.lam.copy()
    for j in range(prior.L - 1):
        lam[j + 1] = lam[j] * (1 - prior.p01[j]) + (1 - lam[j]) * prior.p10[j]
    return Gm2HmmPrior(lam=lam, nu0=prior.nu0.copy(), nu1=prior.nu1.copy(),
                       p01=prior.p01.copy(), p10=prior.p10.copy())


def fit_prior(realizations, max_iters: int = 500, tol: float = 1e-8):
    """Full two-stage fit; returns ``(prior, em_fit, switching)`` with the
    prior made chain-consistent."""
    fit = em_fit_gm2(realizations, max_iters=max_iters, tol=tol)
    sw = estimate_switching_probs(fit.omega)
    raw = Gm2HmmPrior(lam=fit.lam, nu0=fit.nu0, nu1=fit.nu1, p01=sw.p01, p10=sw.p10)
    prior = enforce_consistency(raw)
    shift = float(np.max(np.abs(prior.lam - raw.lam))) if raw.L else 0.0
    log.info("consistency enforcement moved lambda by at most %.4f", shift)
    if shift >= 0.05:
        log.warning("lambda shifted by %.3f when enforcing chain consistency", shift)
    return prior, fit, sw


def save_prior(prior: Gm2HmmPrior, path) -> None:
    with open(path, "w") as fh:
        fh.write("# j lambda nu0 nu1 p01 p10\n")
        for j in range(prior.L):
            vals = (prior.lam[j], prior.nu0[j], prior.nu1[j], prior.p01[j], prior.p10[j])
            fh.write(f"{j} " + " ".join(repr(float(v)) for v in vals) + "\n")


def load_prior(path) -> Gm2HmmPrior:
    rows = np.loadtxt(path, comments="#", ndmin=2)
    order = np.argsort(rows[:, 0])
    rows = rows[order]
    if not np.array_equal(rows[:, 0], np.arange(rows.shape[0])):
        raise ValueError(f"{path}: lag column must be 0..L-1")
    return Gm2HmmPrior(lam=rows[:, 1], nu0=rows[:, 2], nu1=rows[:, 3],
                       p01=rows[:, 4], p10=rows[:, 5])


def excess_kurtosis(v) -> np.ndarray:
    """Sample excess kurtosis along axis 0 (NaN where the variance is zero)."""
    v = np.asarray(v, float)
    c = v - v.mean(axis=0)
    m2 = np.mean(c ** 2, axis=0)
    m4 = np.mean(c ** 4, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = m4 / m2 ** 2 - 3.0
    return np.where(m2 > 0, k, math.nan)
