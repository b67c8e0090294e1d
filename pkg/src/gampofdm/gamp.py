"""Generalized approximate message passing for OFDM channel estimation.

The linear mixing is the truncated (unnormalised) DFT ``z = Phi x`` with
``Phi[i, j] = exp(-2j*pi*i*j/N)``, ``N`` subcarriers and ``L`` taps. Because
``|Phi[i, j]| = 1`` the variance steps collapse to sums, so one iteration costs
two length-N FFTs plus the ``O(N * 2**M)`` symbol-posterior work.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

CLIP = 0.99


class GampDivergence(RuntimeError):
    """Raised when the GAMP state becomes non-finite."""

    def __init__(self, msg, snapshot):
        super().__init__(msg)
        self.snapshot = snapshot


@dataclass
class GampState:
    xhat: np.ndarray
    nux: np.ndarray
    uhat: np.ndarray
    zhat: np.ndarray | None = None
    nuz: np.ndarray | None = None
    phat: np.ndarray | None = None
    nuu: np.ndarray | None = None
    rhat: np.ndarray | None = None
    nur: np.ndarray | None = None
    nup: np.ndarray | None = None  # variance paired with phat
    n_iter: int = 0
    history: list = field(default_factory=list)

    def copy(self) -> "GampState":
        return GampState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                            for k, v in self.__dict__.items() if k != "history"})


@dataclass
class OutputChannelQam:
    """Measurement channel ``p(y|z) = sum_k beta_k CN(y; s_k z, nu_w)``.

    ``log_beta`` holds per-subcarrier log symbol priors, shape ``(N, K)``.
    """

    y: np.ndarray
    log_beta: np.ndarray
    points: np.ndarray
    noise_var: float

    def __post_init__(self):
        lse = logsumexp(self.log_beta, axis=1, keepdims=True)
        self.log_beta = self.log_beta - lse


@dataclass
class InputChannelGm2:
    lam: np.ndarray
    nu0: np.ndarray
    nu1: np.ndarray

    @property
    def mean_energy(self) -> np.ndarray:
        return self.lam * self.nu1 + (1.0 - self.lam) * self.nu0


def gout_qam(y, phat, nuz, log_beta, points, noise_var, clip=CLIP):
    """Output-channel estimator for an uncertain QAM symbol times a gain.

    Returns ``(g_out, g_out', log_xi)`` where ``log_xi`` is the log posterior
    pmf of the symbol under ``z ~ CN(phat, nuz)``.
    """
    y = np.asarray(y)[..., None]
    phat = np.asarray(phat)[..., None]
    nuz = np.asarray(nuz, dtype=float)
    nuz_k = nuz[..., None] if nuz.ndim else nuz
    s = np.asarray(points)
    s2 = np.abs(s) ** 2
    var = s2 * nuz_k + noise_var
    resid = y - s * phat
    loglik = -np.log(np.pi * var) - (resid.real ** 2 + resid.imag ** 2) / var
    log_xi = log_beta + loglik
    log_xi = log_xi - logsumexp(log_xi, axis=-1, keepdims=True)
    xi = np.exp(log_xi)
    zeta = s2 * nuz_k / var
    ek = (y / s - phat) * zeta
    e = np.sum(xi * ek, axis=-1)
    dev = ek - e[..., None]
    nue = np.sum(xi * (dev.real ** 2 + dev.imag ** 2 + noise_var * nuz_k / var), axis=-1)
    nue = np.minimum(nue, clip * nuz)
    g = e / nuz
    gp = (nue / nuz - 1.0) / nuz
    return g, gp, log_xi


def gin_gm2(rhat, nur, lam, nu0, nu1):
    """Input-channel estimator for the two-state Gaussian mixture prior.

    Returns ``(g_in, g_in', alpha, llr_ext)``; ``g_in'`` is normalised so that
    the posterior variance is ``nur * g_in'``, and ``llr_ext`` is the natural
    log of GAMP's extrinsic likelihood ratio for the big state.
    """
    rhat = np.asarray(rhat)
    lam = np.asarray(lam, dtype=float)
    r2 = rhat.real ** 2 + rhat.imag ** 2
    v0 = nu0 + nur
    v1 = nu1 + nur
    llr_ext = np.log(v0) - np.log(v1) + r2 / v0 - r2 / v1
    with np.errstate(divide="ignore"):
        logit = np.log(lam) - np.log1p(-lam) + llr_ext
    alpha = np.where(lam >= 1.0, 1.0, np.where(lam <= 0.0, 0.0, expit(logit)))
    gam0 = nu0 / v0
    gam1 = nu1 / v1
    shrink = alpha * gam1 + (1.0 - alpha) * gam0
    g = shrink * rhat
    gp = alpha * (1.0 - alpha) * (gam1 - gam0) ** 2 * r2 / nur + shrink
    return g, gp, alpha, llr_ext


def dft_apply(x: np.ndarray, N: int) -> np.ndarray:
    """``Phi @ x`` for the N x L truncated DFT."""
    return np.fft.fft(x, n=N)


def dft_adjoint(u: np.ndarray, L: int) -> np.ndarray:
    """``Phi^H @ u`` for the N x L truncated DFT."""
    N = u.shape[-1]
    return N * np.fft.ifft(u)[..., :L]


def init_state(prior: InputChannelGm2, N: int) -> GampState:
    L = prior.lam.size
    return GampState(xhat=np.zeros(L, dtype=complex), nux=prior.mean_energy.astype(float),
                     uhat=np.zeros(N, dtype=complex))


@dataclass
class GampResult:
    state: GampState
    log_xi: np.ndarray
    llr_ext: np.ndarray
    alpha: np.ndarray
    converged: bool


def gamp_run(out: OutputChannelQam, prior: InputChannelGm2, max_iters: int = 15,
             tol: float | None = None, state: GampState | None = None,
             damping: float = 1.0, record: bool = False) -> GampResult:
    """Iterate GAMP until the mean-square change of ``xhat`` drops below
    ``tol`` (default ``1e-6`` times the mean prior tap energy)."""
    y = np.asarray(out.y)
    N = y.size
    L = prior.lam.size
    if tol is None:
        tol = 1e-6 * float(np.mean(prior.mean_energy))
    st = init_state(prior, N) if state is None else state.copy()
    xhat, nux, uhat = st.xhat, st.nux, st.uhat
    converged = False
    log_xi = alpha = llr_ext = None
    n = 0
    for n in range(1, max_iters + 1):
        zhat = dft_apply(xhat, N)
        nuz = float(np.sum(nux))
        phat = zhat - nuz * uhat
        u_new, gp_out, log_xi = gout_qam(y, phat, nuz, out.log_beta, out.points, out.noise_var)
        if damping != 1.0 and n > 1:
            u_new = damping * u_new + (1.0 - damping) * uhat
        nuu = -gp_out
        nur = 1.0 / float(np.sum(nuu))
        rhat = xhat + nur * dft_adjoint(u_new, L)
        x_new, gp_in, alpha, llr_ext = gin_gm2(rhat, nur, prior.lam, prior.nu0, prior.nu1)
        if damping != 1.0:
            x_new = damping * x_new + (1.0 - damping) * xhat
        nux = nur * gp_in
        diff = float(np.mean(np.abs(x_new - xhat) ** 2))
        xhat, uhat = x_new, u_new
        if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(nux)) and np.isfinite(nur)):
            snap = dict(iteration=n, xhat=xhat, nux=nux, nur=nur, nuz=nuz, phat=phat)
            raise GampDivergence(f"non-finite GAMP state at iteration {n}", snap)
        if record:
            st.history.append(dict(iteration=n, xhat=xhat.copy(), diff=diff))
        if diff < tol:
            converged = True
            break
    st.xhat, st.nux, st.uhat = xhat, nux, uhat
    st.phat, st.nuu, st.rhat = phat, nuu, rhat
    st.nup = np.full(N, nuz)
    st.nur = np.full(L, nur)
    st.zhat = dft_apply(xhat, N)
    st.nuz = np.full(N, float(np.sum(nux)))
    st.n_iter = n
    return GampResult(state=st, log_xi=log_xi, llr_ext=llr_ext, alpha=alpha,
                      converged=converged)
