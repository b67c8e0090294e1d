"""Clustered multipath taps from the Saleh-Valenzuela model (802.15.4a style)
sampled through a square-root raised-cosine transmit/receive pulse pair.

Times are in nanoseconds and rates in 1/ns throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
import math
import struct
import warnings

import numpy as np


@dataclass(frozen=True)
class SalehValenzuelaParams:
    """Defaults: 802.15.4a outdoor NLOS (CM6), see ``data/outdoor_nlos.cfg``."""

    cluster_rate: float = 0.0243  # Lambda
    component_rate1: float = 0.15  # lambda_1
    component_rate2: float = 1.13  # lambda_2
    mixture_weight: float = 0.062  # beta
    cluster_decay: float = 104.7  # Gamma
    intra_cluster_decay: float = 9.3  # gamma
    nakagami_mean: float = 0.56  # m0
    nakagami_std: float = 0.25  # m0 hat
    nakagami_in_db: bool = True
    mean_cluster_count: float = 10.5  # C bar
    components_per_cluster: int = 100  # K
    sync_offset_lags: int = 20  # Lpre
    sync_rate: float | None = None  # Lambda_0; None means 1/T

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v}")
        for name in ("cluster_rate", "component_rate1", "component_rate2",
                     "cluster_decay", "intra_cluster_decay", "mean_cluster_count"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sync_rate is not None and not self.sync_rate > 0:
            raise ValueError("sync_rate must be positive")
        if not 0.0 <= self.mixture_weight <= 1.0:
            raise ValueError("mixture_weight must lie in [0, 1]")
        if self.components_per_cluster < 1:
            raise ValueError("components_per_cluster must be >= 1")
        if self.sync_offset_lags < 0:
            raise ValueError("sync_offset_lags must be >= 0")
        if self.nakagami_std < 0:
            raise ValueError("nakagami_std must be >= 0")

    def energy_norm(self) -> float:
        """Denominator of the component energy profile."""
        b = self.mixture_weight
        return self.intra_cluster_decay * (
            (1 - b) * self.component_rate1 + b * self.component_rate2 + 1.0)


@dataclass(frozen=True)
class PulsePair:
    """SRRC transmit and receive pulses; their cascade is a raised cosine."""

    rolloff: float = 0.5
    T: float = 1e3 / 256.0  # baud interval, ns (256 MHz)
    halfwidth: int = 10  # truncation, in baud intervals

    def __post_init__(self):
        if not 0.0 < self.rolloff <= 1.0:
            raise ValueError("rolloff must be in (0, 1]")
        if self.T <= 0 or self.halfwidth < 1:
            raise ValueError("T must be positive and halfwidth >= 1")

    def srrc(self, t) -> np.ndarray:
        """Unit-energy SRRC pulse at times ``t`` (ns), untruncated."""
        b = self.rolloff
        tt = np.asarray(t, float) / self.T
        out = np.empty_like(tt)
        at0 = np.isclose(tt, 0.0, atol=1e-12)
        sing = np.isclose(np.abs(tt), 1.0 / (4 * b), atol=1e-12)
        reg = ~(at0 | sing)
        x = tt[reg]
        out[reg] = (np.sin(np.pi * x * (1 - b)) + 4 * b * x * np.cos(np.pi * x * (1 + b))) / (
            np.pi * x * (1 - (4 * b * x) ** 2))
        out[at0] = 1 - b + 4 * b / np.pi
        out[sing] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                      + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
        return out / np.sqrt(self.T)

    def sampled_srrc(self, oversample: int = 16) -> tuple[np.ndarray, float]:
        """Truncated SRRC samples scaled to unit discrete energy
        ``sum |g|^2 dt = 1``; returns ``(samples, dt)``."""
        dt = self.T / oversample
        n = self.halfwidth * oversample
        g = self.srrc(np.arange(-n, n + 1) * dt)
        g = g / np.sqrt(np.sum(g ** 2) * dt)
        return g, dt

    def cascade(self, t) -> np.ndarray:
        """``(g_r * g_t)(t)``: raised cosine with unit peak, truncated at
        ``halfwidth`` baud."""
        b = self.rolloff
        tt = np.asarray(t, float) / self.T
        sing = np.isclose(np.abs(2 * b * tt), 1.0, atol=1e-10)
        denom = np.where(sing, 1.0, 1 - (2 * b * tt) ** 2)
        out = np.sinc(tt) * np.cos(np.pi * b * tt) / denom
        out = np.where(sing, np.pi / 4 * np.sinc(1 / (2 * b)), out)
        return np.where(np.abs(tt) <= self.halfwidth, out, 0.0)


@dataclass
class ImpulseResponse:
    delays: np.ndarray  # ns
    amplitudes: np.ndarray  # complex
    cluster_delays: np.ndarray
    n_clusters: int


@dataclass
class TapVector:
    taps: np.ndarray
    states: np.ndarray | None = None

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=complex)
        if self.taps.ndim != 1 or not np.all(np.isfinite(self.taps)):
            raise ValueError("taps must be a finite 1-D array")
        if self.states is not None:
            self.states = np.asarray(self.states, dtype=np.int8)
            if self.states.shape != self.taps.shape:
                raise ValueError("states must match taps in length")

    @property
    def L(self) -> int:
        return self.taps.size


def _nakagami_m(params: SalehValenzuelaParams, rng, size) -> np.ndarray:
    m = rng.normal(params.nakagami_mean, params.nakagami_std, size=size)
    if params.nakagami_in_db:
        m = 10.0 ** (m / 10.0)
    return np.maximum(m, 0.5)


def generate_impulse_response(params: SalehValenzuelaParams, rng: np.random.Generator,
                              T: float = PulsePair.T) -> ImpulseResponse:
    """One Saleh-Valenzuela impulse response.

    Cluster count ``C ~ Poisson(C bar)`` (redrawn until ``C >= 1``); the first
    cluster arrives at ``Lpre * T + Exp(1 / Lambda_0)`` and later clusters
    follow a Poisson process of rate ``Lambda``. Within a cluster the first
    component has zero relative delay and inter-arrivals follow the two-rate
    exponential mixture.
    """
    C = 0
    while C < 1:
        C = int(rng.poisson(params.mean_cluster_count))
    K = params.components_per_cluster
    sync_rate = params.sync_rate if params.sync_rate is not None else 1.0 / T
    t0 = params.sync_offset_lags * T + rng.exponential(1.0 / sync_rate)
    gaps = rng.exponential(1.0 / params.cluster_rate, size=C - 1)
    rel_cluster = np.concatenate([[0.0], np.cumsum(gaps)])
    # component inter-arrivals: rate lambda_1 with prob beta, else lambda_2
    pick1 = rng.random((C, K - 1)) < params.mixture_weight
    rates = np.where(pick1, params.component_rate1, params.component_rate2)
    inter = rng.exponential(1.0, size=(C, K - 1)) / rates
    tau = np.concatenate([np.zeros((C, 1)), np.cumsum(inter, axis=1)], axis=1)
    mean_energy = np.exp(-rel_cluster[:, None] / params.cluster_decay
                         - tau / params.intra_cluster_decay) / params.energy_norm()
    m = _nakagami_m(params, rng, (C, K))
    power = rng.gamma(shape=m, scale=mean_energy / m)
    phase = rng.uniform(0.0, 2 * np.pi, size=(C, K))
    amp = np.sqrt(power) * np.exp(1j * phase)
    delays = t0 + rel_cluster[:, None] + tau
    return ImpulseResponse(delays=delays.ravel(), amplitudes=amp.ravel(),
                           cluster_delays=t0 + rel_cluster, n_clusters=C)


def sample_taps(impulse: ImpulseResponse, pulses: PulsePair, L: int,
                warn_fraction: float = 0.01) -> TapVector:
    """``x_j = sum_p a_p (g_r * g_t)(j T - tau_p)`` for ``j = 0..L-1``.

    Warns when more than ``warn_fraction`` of the pulse-shaped energy falls
    outside ``0..L-1``.
    """
    d = np.asarray(impulse.delays) / pulses.T
    a = np.asarray(impulse.amplitudes)
    hw = pulses.halfwidth
    if d.size == 0:
        return TapVector(np.zeros(L, complex))
    lo = int(math.floor(d.min())) - hw
    hi = int(math.ceil(d.max())) + hw
    lo = min(lo, 0)
    offs = np.arange(-hw, hw + 2)
    base = np.floor(d).astype(np.int64)
    lags = base[:, None] + offs[None, :]
    w = pulses.cascade((lags - d[:, None]) * pulses.T)
    full = np.zeros(max(hi, L) - lo + 2, dtype=complex)
    np.add.at(full, (lags - lo).ravel(), (a[:, None] * w).ravel())
    taps = full[-lo:-lo + L]
    total = np.sum(np.abs(full) ** 2)
    outside = total - np.sum(np.abs(taps) ** 2)
    if total > 0 and outside > warn_fraction * total:
        warnings.warn(f"{100 * outside / total:.1f}% of tap energy lies beyond lag {L}",
                      RuntimeWarning, stacklevel=2)
    return TapVector(taps.copy())


def generate_taps(params: SalehValenzuelaParams, pulses: PulsePair, L: int,
                  rng: np.random.Generator, normalize: bool = True) -> TapVector:
    """Impulse response plus pulse shaping; optionally scaled to unit energy."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tv = sample_taps(generate_impulse_response(params, rng, pulses.T), pulses, L)
    if normalize:
        e = np.sum(np.abs(tv.taps) ** 2)
        if e > 0:
            tv.taps = tv.taps / np.sqrt(e)
    return tv


def generate_realizations(params: SalehValenzuelaParams, pulses: PulsePair, L: int,
                          count: int, seed, normalize: bool = True) -> np.ndarray:
    """``(count, L)`` complex array of independent tap vectors."""
    rng = np.random.default_rng(seed)
    out = np.empty((count, L), dtype=complex)
    for u in range(count):
        out[u] = generate_taps(params, pulses, L, rng, normalize).taps
    return out


def estimate_pdp(realizations) -> np.ndarray:
    """Sample mean of ``|x_j|^2`` over realizations (``(U, L)`` or a list of
    :class:`TapVector`)."""
    if isinstance(realizations, (list, tuple)) and realizations and isinstance(
            realizations[0], TapVector):
        realizations = np.stack([r.taps for r in realizations])
    x = np.asarray(realizations)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] < 1:
        raise ValueError("need at least one realization")
    return np.mean(np.abs(x) ** 2, axis=0)


_HEADER = struct.Struct("<II")


def save_realizations(path, realizations) -> None:
    """Little-endian complex64 dump with an ``(L, count)`` uint32 header."""
    x = np.asarray(realizations)
    if x.ndim == 1:
        x = x[None, :]
    count, L = x.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(L, count))
        fh.write(x.astype("<c8").tobytes())


def load_realizations(path) -> np.ndarray:
    with open(path, "rb") as fh:
        L, count = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<c8")
    if data.size != L * count:
        raise ValueError(f"{path}: expected {L * count} samples, found {data.size}")
    return data.reshape(count, L).astype(complex)
