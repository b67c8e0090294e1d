"""Turbo receiver: soft demapping, equalizer iterations and SISO decoding.

Bit messages are LLRs (positive favours 0). Symbol messages are log pmfs or
log likelihoods over the ``2**M`` constellation points, one row per
subcarrier.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import time

import numpy as np
from scipy.special import logsumexp

from . import baselines
from .gamp import GampDivergence, InputChannelGm2, OutputChannelQam, gamp_run
from .hmm import forward_backward
from .ldpc import LLR_MAX
from .modem import Constellation, FrameConfig, deinterleave, interleave

log = logging.getLogger(__name__)

ALGORITHMS = ("gamp_mc", "gamp", "lmmse", "lasso", "pcsi")


@dataclass(frozen=True)
class ReceiverConfig:
    max_turbo: int = 10
    max_equalizer: int = 5
    max_gamp: int = 15
    decoder_iters: int = 25
    turbo_tol: float = 1e-2  # mean |delta LLR| of decoder output
    equalizer_tol: float = 1e-4  # times L, mean-square tap-state LLR change
    gamp_tol: float | None = None
    warm_start: bool = False  # reuse the previous GAMP state as the starting point
    soft_output: str = "phat"  # leftward channel estimate: "phat" (extrinsic) or "zhat"

    def __post_init__(self):
        for name in ("max_turbo", "max_equalizer", "max_gamp", "decoder_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.turbo_tol < 0 or self.equalizer_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.soft_output not in ("phat", "zhat"):
            raise ValueError("soft_output must be 'phat' or 'zhat'")


def _bit_logprobs(llr):
    """``(log Pr{0}, log Pr{1})`` from LLRs, exact for +-inf."""
    llr = np.asarray(llr, float)
    with np.errstate(invalid="ignore"):
        lp0 = -np.logaddexp(0.0, -llr)
        lp1 = -np.logaddexp(0.0, llr)
    return lp0, lp1


def _label_table(llr, labels):
    """Per-bit log-probability of each point's label, shape ``(..., K, M)``."""
    lp0, lp1 = _bit_logprobs(llr)
    lab = labels.astype(bool)  # (K, M)
    return np.where(lab, lp1[..., None, :], lp0[..., None, :])


def bits_to_symbols(bit_llr, constellation: Constellation) -> np.ndarray:
    """Rightward symbol log-pmf ``log beta[i, k] = sum_m log p(c_m = label)``.

    ``bit_llr`` is ``(..., M)``; known bits carry ``+-inf``.
    """
    tab = _label_table(bit_llr, constellation.labels)
    lb = tab.sum(axis=-1)
    return lb - logsumexp(lb, axis=-1, keepdims=True)


def symbols_to_bits(log_like, bit_llr, constellation: Constellation, known=None):
    """Extrinsic bit LLRs from leftward symbol log-likelihoods.

    For bit ``m``: ``sum_{k: c_m=c} like_k * prod_{m' != m} p(c_m')`` over both
    values of ``c``; the product over the other bits is formed directly rather
    than by dividing out the incoming message. Positions flagged in ``known``
    are returned as 0 (they are never updated).
    """
    labels = constellation.labels.astype(bool)
    tab = _label_table(bit_llr, labels)  # (..., K, M)
    M = labels.shape[1]
    out = np.zeros(np.shape(bit_llr), float)
    for m in range(M):
        others = np.delete(tab, m, axis=-1).sum(axis=-1)  # (..., K)
        score = log_like + others
        s1 = labels[:, m]
        with np.errstate(invalid="ignore"):
            num0 = logsumexp(np.where(~s1, score, -np.inf), axis=-1)
            num1 = logsumexp(np.where(s1, score, -np.inf), axis=-1)
            v = num0 - num1
        out[..., m] = np.nan_to_num(v, nan=0.0, posinf=LLR_MAX, neginf=-LLR_MAX)
    out = np.clip(out, -LLR_MAX, LLR_MAX)
    if known is not None:
        out[np.asarray(known, bool)] = 0.0
    return out


def leftward_symbol_likelihood(y, zhat, nuz, points, noise_var) -> np.ndarray:
    """``log CN(y_i; s_k zhat_i, |s_k|^2 nuz_i + nu_w)``, shape ``(N, K)``."""
    y = np.asarray(y)[:, None]
    zhat = np.asarray(zhat)[:, None]
    nuz = np.broadcast_to(np.asarray(nuz, float), (y.shape[0],))[:, None]
    s = np.asarray(points)[None, :]
    var = np.abs(s) ** 2 * nuz + noise_var
    r = y - s * zhat
    return -np.log(np.pi * var) - (r.real ** 2 + r.imag ** 2) / var


@dataclass
class FrameKnowledge:
    """What the receiver knows about the frame layout: which bit positions are
    pilots or training (and their values) and where coded bits sit."""

    known: np.ndarray  # (Q, N, M) bool
    known_bits: np.ndarray  # (Q, N, M) uint8, valid where known
    data_slots: np.ndarray  # (Md,) flat slot indices into N*M
    pilot_mask: np.ndarray  # (N,) bool

    @classmethod
    def from_frame(cls, frame) -> "FrameKnowledge":
        kb = np.where(frame.known, frame.bit_grid, 0).astype(np.uint8)
        return cls(known=frame.known.copy(), known_bits=kb, data_slots=frame.data_slots,
                   pilot_mask=frame.pilot_mask)


@dataclass
class Genie:
    """Simulation-only side information."""

    taps: np.ndarray | None = None  # (Q, L)
    gains: np.ndarray | None = None  # (Q, N)


@dataclass
class ReceiverOutput:
    info_hat: np.ndarray  # final info-bit decisions
    xhat: np.ndarray  # (Q, L) final tap estimates
    iterations: list = field(default_factory=list)  # per turbo iteration records
    n_turbo: int = 0
    stop_reason: str = ""
    failed: bool = False
    error: str | None = None

    def checkpoint(self, t):
        """Record after turbo iteration ``t`` (1-based); later iterations
        than were run return the final record."""
        if not self.iterations:
            return None
        return self.iterations[min(t, len(self.iterations)) - 1]


class _GampEqualizer:
    def __init__(self, prior, N, rcfg: ReceiverConfig, use_chain: bool):
        self.prior = prior
        self.rcfg = rcfg
        self.use_chain = use_chain
        self.lam = np.asarray(prior.lam, float).copy()
        self.state = None
        self.N = N

    def step(self, y, log_beta, points, noise_var):
        rc, pr = self.rcfg, self.prior
        out = OutputChannelQam(y=y, log_beta=log_beta, points=points, noise_var=noise_var)
        tol_ll = rc.equalizer_tol * pr.L
        prev_llr = None
        n_eq = n_gamp = 0
        res = None
        for e in range(rc.max_equalizer if self.use_chain else 1):
            inp = InputChannelGm2(lam=self.lam, nu0=pr.nu0, nu1=pr.nu1)
            res = gamp_run(out, inp, max_iters=rc.max_gamp, tol=rc.gamp_tol,
                           state=self.state if rc.warm_start else None)
            self.state = res.state
            n_eq += 1
            n_gamp += res.state.n_iter
            if not self.use_chain:
                break
            llr = res.llr_ext
            self.lam = forward_backward(llr, pr.lam[0], pr.p01, pr.p10)
            if prev_llr is not None and np.mean((llr - prev_llr) ** 2) < tol_ll:
                break
            prev_llr = llr
        st = res.state
        if rc.soft_output == "phat":
            return st.xhat, st.phat, st.nup, dict(eq_iters=n_eq, gamp_iters=n_gamp)
        return st.xhat, st.zhat, st.nuz, dict(eq_iters=n_eq, gamp_iters=n_gamp)


def _symbol_moments(log_beta, points):
    p = np.exp(log_beta)
    mean = p @ points
    var = np.maximum(p @ (np.abs(points) ** 2) - np.abs(mean) ** 2, 0.0)
    return mean, var


def run_receiver(y, prior, code, cfg: FrameConfig, rcfg: ReceiverConfig,
                 constellation: Constellation, perm, layout: FrameKnowledge,
                 algorithm: str = "gamp_mc", noise_var: float | None = None,
                 genie: Genie | None = None) -> ReceiverOutput:
    """Decode one codeword spread over ``Q`` OFDM symbols.

    ``algorithm`` picks the channel estimator: ``gamp_mc`` (GAMP with the
    tap-state chain), ``gamp`` (chain disconnected), ``lmmse``, ``lasso``
    (genie-tuned, needs ``genie.taps``) or ``pcsi`` (needs ``genie.gains``).
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    y = np.atleast_2d(np.asarray(y))
    Q, N, M = cfg.Q, cfg.N, cfg.M
    nuw = cfg.noise_var if noise_var is None else noise_var
    pts = constellation.points
    known = layout.known
    slots = layout.data_slots
    known_llr = np.where(layout.known_bits == 0, np.inf, -np.inf)
    pdp = prior.pdp
    Phi = baselines.dft_matrix(N, prior.L) if algorithm in ("lmmse", "lasso") else None
    gamp_eq = [_GampEqualizer(prior, N, rcfg, algorithm == "gamp_mc")
               for _ in range(Q)] if algorithm.startswith("gamp") else None
    lasso_best = [None] * Q  # (mse, SoftChannel) of the frozen LASSO output

    dec_ext = np.zeros(code.n)
    xhat = np.zeros((Q, prior.L), complex)
    out = ReceiverOutput(info_hat=np.zeros(code.k, np.uint8), xhat=xhat)
    prev_dec = None
    for t in range(1, rcfg.max_turbo + 1):
        t0 = time.perf_counter()
        # decoder -> bits on the grid
        grid = np.zeros((Q, N * M))
        grid[:, slots] = interleave(dec_ext, perm).reshape(Q, cfg.Md)
        grid = np.where(known, known_llr, grid.reshape(Q, N, M))
        log_beta = bits_to_symbols(grid, constellation)
        demod = np.zeros((Q, N, M))
        eq_info = []
        try:
            for q in range(Q):
                if algorithm == "pcsi":
                    zq, nzq = genie.gains[q], np.zeros(N)
                    xq, info = (genie.taps[q] if genie.taps is not None
                                else np.zeros(prior.L)), {}
                elif gamp_eq is not None:
                    xq, zq, nzq, info = gamp_eq[q].step(y[q], log_beta[q], pts, nuw)
                else:
                    s_mean, s_var = _symbol_moments(log_beta[q], pts)
                    model = baselines.whiten(y[q], s_mean, s_var, pdp, nuw, Phi)
                    if algorithm == "lmmse":
                        sc = baselines.lmmse_equalize(model, pdp, N)
                        info = {}
                    else:
                        if t == 1 and cfg.Np > 0:
                            model = model.rows(layout.pilot_mask)
                        sc = baselines.lasso_equalize(model, genie.taps[q], N)
                        best = lasso_best[q]
                        if best is not None and sc.info["mse"] >= best[0]:
                            sc = best[1]
                        else:
                            lasso_best[q] = (sc.info["mse"], sc)
                        info = dict(lasso_target=sc.info["target"], lasso_ok=sc.info["ok"])
                    xq, zq, nzq = sc.xhat, sc.zhat, sc.nuz
                xhat[q] = xq
                eq_info.append(info)
                ll = leftward_symbol_likelihood(y[q], zq, nzq, pts, nuw)
                demod[q] = symbols_to_bits(ll, grid[q], constellation, known[q])
        except (GampDivergence, np.linalg.LinAlgError) as exc:
            log.warning("receiver aborted in turbo iteration %d: %s", t, exc)
            out.failed, out.error, out.stop_reason = True, str(exc), "abort"
            break
        coded = deinterleave(demod.reshape(Q, N * M)[:, slots].reshape(-1), perm)
        dec_ext, post, ok, n_dec = code.siso_decode(coded, rcfg.decoder_iters)
        info_hat = code.extract_info((post < 0).astype(np.uint8))
        rec = dict(turbo_iter=t, info_hat=info_hat, xhat=xhat.copy(), decoder_iters=n_dec,
                   syndrome_ok=bool(ok), seconds=time.perf_counter() - t0)
        if gamp_eq is not None:
            rec["eq_iters"] = sum(i["eq_iters"] for i in eq_info)
            rec["gamp_iters"] = sum(i["gamp_iters"] for i in eq_info)
        out.iterations.append(rec)
        out.info_hat, out.n_turbo = info_hat, t
        if ok and code.n != code.k:
            out.stop_reason = "syndrome"
            break
        if prev_dec is not None and np.mean(np.abs(post - prev_dec)) < rcfg.turbo_tol:
            out.stop_reason = "converged"
            break
        prev_dec = post
    else:
        out.stop_reason = "max_iters"
    out.xhat = xhat
    return out
