"""Forward-backward on the two-state tap-state Markov chain.

States are ordered ``(0, 1)`` = (small, big). The transition from lag ``j`` to
``j + 1`` is::

    [[1 - p10[j], p10[j]],
     [p01[j],     1 - p01[j]]]

with ``p01[j] = Pr{d[j+1]=0 | d[j]=1}`` and ``p10[j] = Pr{d[j+1]=1 | d[j]=0}``.

Messages are carried as log-odds (big vs small), which keeps the recursion
finite for any evidence magnitude and any chain length.
"""
from __future__ import annotations

import math

import numpy as np

_NEG = -math.inf


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else _NEG


def _lae(a: float, b: float) -> float:
    if a == _NEG:
        return b
    if b == _NEG:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def _propagate(logodds: float, l00: float, l01: float, l10: float, l11: float) -> float:
    """Push a belief with log-odds ``logodds`` (1 vs 0) through a transition."""
    if logodds == math.inf:
        return l11 - l10
    if logodds == _NEG:
        return l01 - l00
    # log p0 = -softplus(t), log p1 = -softplus(-t); common offset cancels
    a0 = -max(logodds, 0.0)
    a1 = logodds - max(logodds, 0.0)
    return _lae(a0 + l01, a1 + l11) - _lae(a0 + l00, a1 + l10)


def _back(logodds: float, l00: float, l01: float, l10: float, l11: float) -> float:
    """Backward message log-odds at lag j from the evidence log-odds at j+1."""
    if logodds == math.inf:
        return l11 - l01
    if logodds == _NEG:
        return l10 - l00
    a0 = -max(logodds, 0.0)
    a1 = logodds - max(logodds, 0.0)
    return _lae(l10 + a0, l11 + a1) - _lae(l00 + a0, l01 + a1)


def forward_backward(llr_ext, lam0, p01, p10, return_posterior=False):
    """Extrinsic big-state probabilities from one forward/backward sweep.

    ``llr_ext[j]`` is the log likelihood ratio ``log p(e_j|d=1) / p(e_j|d=0)``
    of the leaf evidence at lag ``j``. The returned ``lam_out[j]`` is the
    chain's belief that ``d[j] = 1`` given every leaf except ``e_j``; this is
    what goes back to GAMP as the next tap-state prior. ``lam0`` is the
    marginal of ``d[0]``.
    """
    llr = [float(v) for v in np.asarray(llr_ext, dtype=float)]
    L = len(llr)
    p01 = np.asarray(p01, dtype=float)
    p10 = np.asarray(p10, dtype=float)
    trans = [(_log(1.0 - p10[j]), _log(p10[j]), _log(p01[j]), _log(1.0 - p01[j]))
             for j in range(L - 1)]
    fwd = [0.0] * L
    fwd[0] = _log(lam0) - _log(1.0 - lam0) if 0.0 < lam0 < 1.0 else (
        math.inf if lam0 >= 1.0 else _NEG)
    for j in range(L - 1):
        fwd[j + 1] = _propagate(fwd[j] + llr[j], *trans[j])
    bwd = [0.0] * L
    for j in range(L - 2, -1, -1):
        bwd[j] = _back(bwd[j + 1] + llr[j + 1], *trans[j])
    ext = np.array([f + b for f, b in zip(fwd, bwd)])
    lam_out = np.array([_sigmoid(t) for t in ext])
    if return_posterior:
        post = np.array([_sigmoid(t + e) for t, e in zip(ext, llr)])
        return lam_out, post
    return lam_out


def chain_marginals(lam0: float, p01, p10, L: int) -> np.ndarray:
    """Marginal ``Pr{d[j] = 1}`` implied by the chain."""
    lam = np.empty(L)
    lam[0] = lam0
    for j in range(L - 1):
        lam[j + 1] = lam[j] * (1.0 - p01[j]) + (1.0 - lam[j]) * p10[j]
    return lam
