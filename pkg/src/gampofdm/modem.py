"""BICM-OFDM transmit chain and frequency-domain channel.

Bit-label convention: ``labels[k, m]`` is bit ``m`` of constellation point
``k``; bit 0 is the MSB (sign of the in-phase level for square QAM).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np


@dataclass(frozen=True)
class Constellation:
    points: np.ndarray  # (2**M,) complex, unit mean energy
    labels: np.ndarray  # (2**M, M) uint8

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def size(self) -> int:
        return self.points.size

    def map_bits(self, bits: np.ndarray) -> np.ndarray:
        """Map a ``(..., M)`` bit array to constellation points."""
        bits = np.asarray(bits, dtype=np.int64)
        M = self.bits_per_symbol
        weights = 1 << np.arange(M - 1, -1, -1)
        return self.points[bits @ weights]

    def soft_moments(self, logpmf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of symbols under row-wise log-pmfs ``(..., K)``."""
        p = np.exp(logpmf - logpmf.max(axis=-1, keepdims=True))
        p /= p.sum(axis=-1, keepdims=True)
        mean = p @ self.points
        second = p @ (np.abs(self.points) ** 2)
        return mean, np.maximum(second - np.abs(mean) ** 2, 0.0)


def _gray(n_bits: int) -> np.ndarray:
    idx = np.arange(1 << n_bits)
    return idx ^ (idx >> 1)


def build_constellation(M: int) -> Constellation:
    """Gray-labelled square QAM with ``2**M`` points and unit mean energy."""
    if M not in (2, 4, 6):
        raise ValueError(f"unsupported bits per symbol M={M}; expected 2, 4 or 6")
    half = M // 2
    n_lev = 1 << half
    levels = 2.0 * np.arange(n_lev) - (n_lev - 1)
    gray = _gray(half)
    # level_of_label[g] = amplitude carrying Gray label g
    level_of_label = np.empty(n_lev)
    level_of_label[gray] = levels
    K = 1 << M
    k = np.arange(K)
    i_lab = k >> half
    q_lab = k & (n_lev - 1)
    pts = level_of_label[i_lab] + 1j * level_of_label[q_lab]
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    labels = ((k[:, None] >> np.arange(M - 1, -1, -1)) & 1).astype(np.uint8)
    return Constellation(points=pts, labels=labels)


def interleaver(n: int, seed) -> np.ndarray:
    """Seeded random permutation of length ``n``."""
    return np.random.default_rng(seed).permutation(n)


def interleave(bits: np.ndarray, perm: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.shape[-1] != perm.size:
        raise ValueError(f"length {bits.shape[-1]} does not match permutation {perm.size}")
    return bits[..., perm]


def deinterleave(bits: np.ndarray, perm: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.shape[-1] != perm.size:
        raise ValueError(f"length {bits.shape[-1]} does not match permutation {perm.size}")
    out = np.empty_like(bits)
    out[..., perm] = bits
    return out


@dataclass(frozen=True)
class FrameConfig:
    """OFDM frame arithmetic.

    ``rate`` is the code rate; the number of information bits per codeword is
    ``rate * n_coded`` and must be integral.
    """

    N: int = 256
    L: int = 64
    M: int = 4
    Np: int = 0
    Mt: int = 112
    Q: int = 2
    rate: float = 0.5614035087719298
    noise_var: float = 1.0

    def __post_init__(self):
        if not 0 < self.L < self.N:
            raise ValueError(f"need 0 < L < N, got L={self.L}, N={self.N}")
        if not 0 <= self.Np <= self.N:
            raise ValueError(f"Np={self.Np} out of range")
        if not 0 <= self.Mt <= self.Nd:
            raise ValueError(f"Mt={self.Mt} exceeds data subcarriers Nd={self.Nd}")
        if self.Q < 1:
            raise ValueError("Q must be >= 1")
        if not 0 < self.rate <= 1:
            raise ValueError(f"rate {self.rate} not in (0, 1]")
        if self.Md > 0 and abs(self.rate * self.Mc - round(self.rate * self.Mc)) > 1e-6:
            raise ValueError(f"rate*Mc = {self.rate * self.Mc} is not integral")

    @property
    def Nd(self) -> int:
        return self.N - self.Np

    @property
    def Md(self) -> int:
        return self.Nd * self.M - self.Mt

    @property
    def Mc(self) -> int:
        return self.Md * self.Q

    @property
    def Mi(self) -> int:
        return int(round(self.rate * self.Mc))

    @property
    def eta(self) -> float:
        return self.Md * self.rate / self.N

    @classmethod
    def for_efficiency(cls, N, L, M, Np, Mt, eta, codeword_len, noise_var=1.0, coded=True):
        """Pick ``Q`` and ``rate`` so that ``Md * rate / N == eta`` with
        codeword length close to ``codeword_len``."""
        Md = (N - Np) * M - Mt
        if Md <= 0:
            raise ValueError("no coded-bit capacity left in the frame")
        if not coded:
            return cls(N=N, L=L, M=M, Np=Np, Mt=Mt, Q=max(1, round(codeword_len / Md)),
                       rate=1.0, noise_var=noise_var)
        Q = max(1, round(codeword_len / Md))
        rate = eta * N / Md
        if rate >= 1:
            raise ValueError(f"eta={eta} infeasible: required rate {rate:.3f} >= 1")
        info = eta * N * Q
        if abs(info - round(info)) > 1e-9:
            raise ValueError("eta*N*Q must be an integer number of info bits")
        return cls(N=N, L=L, M=M, Np=Np, Mt=Mt, Q=Q, rate=round(info) / (Md * Q),
                   noise_var=noise_var)


def noise_var_from_ebn0(ebn0_db: float, eta: float) -> float:
    """Noise variance per subcarrier for unit-energy symbols and unit mean
    channel energy, normalised per information bit (pilot/training overhead
    included through ``eta``)."""
    return 1.0 / (eta * 10.0 ** (ebn0_db / 10.0))


def ebn0_from_noise_var(noise_var: float, eta: float) -> float:
    return 10.0 * math.log10(1.0 / (eta * noise_var))


@dataclass
class Frame:
    """One codeword spread over ``Q`` OFDM symbols.

    ``bit_grid`` is ``(Q, N, M)``; ``known`` marks pilot and training bits,
    ``data_slots`` lists, per OFDM symbol, the flat ``N*M`` positions that carry
    coded bits in interleaved order.
    """

    info_bits: np.ndarray
    codeword: np.ndarray
    interleaved: np.ndarray
    bit_grid: np.ndarray
    symbols: np.ndarray  # (Q, N)
    pilot_mask: np.ndarray  # (N,) bool
    known: np.ndarray  # (Q, N, M) bool
    data_slots: np.ndarray  # (Md,) flat indices, same for every OFDM symbol
    gains: np.ndarray | None = None  # (Q, N)
    observations: np.ndarray | None = None  # (Q, N)
    extras: dict = field(default_factory=dict)


def frame_layout(cfg: FrameConfig, rng: np.random.Generator):
    """Pilot subcarriers (random), training MSBs (uniformly spaced over data
    subcarriers) and the remaining coded-bit slots."""
    N, M = cfg.N, cfg.M
    pilot_mask = np.zeros(N, dtype=bool)
    if cfg.Np:
        pilot_mask[rng.choice(N, size=cfg.Np, replace=False)] = True
    data_sc = np.flatnonzero(~pilot_mask)
    known = np.zeros((N, M), dtype=bool)
    known[pilot_mask] = True
    train_sc = np.empty(0, dtype=np.int64)
    if cfg.Mt:
        train_sc = data_sc[(np.arange(cfg.Mt) * cfg.Nd) // cfg.Mt]
        known[train_sc, 0] = True
    data_slots = np.flatnonzero(~known.ravel())
    assert data_slots.size == cfg.Md
    return pilot_mask, train_sc, known, data_slots


def assemble_frame(codeword: np.ndarray, cfg: FrameConfig, rng: np.random.Generator,
                   perm: np.ndarray, constellation: Constellation,
                   info_bits: np.ndarray | None = None) -> Frame:
    """Interleave ``codeword`` and place it, with pilots and training bits,
    onto ``Q`` OFDM symbols."""
    codeword = np.asarray(codeword, dtype=np.uint8)
    if codeword.size != cfg.Mc:
        raise ValueError(f"codeword length {codeword.size} != Mc = {cfg.Mc}")
    if constellation.bits_per_symbol != cfg.M:
        raise ValueError("constellation does not match M")
    pilot_mask, train_sc, known, data_slots = frame_layout(cfg, rng)
    inter = interleave(codeword, perm) if cfg.Mc else codeword
    Q, N, M = cfg.Q, cfg.N, cfg.M
    grid = np.zeros((Q, N * M), dtype=np.uint8)
    grid[:, data_slots] = inter.reshape(Q, cfg.Md)
    grid = grid.reshape(Q, N, M)
    if cfg.Np:
        grid[:, pilot_mask, :] = rng.integers(0, 2, size=(Q, cfg.Np, M), dtype=np.uint8)
    if cfg.Mt:
        grid[:, train_sc, 0] = 1
    symbols = constellation.map_bits(grid)
    return Frame(
        info_bits=np.asarray(info_bits if info_bits is not None else np.empty(0), np.uint8),
        codeword=codeword,
        interleaved=inter,
        bit_grid=grid,
        symbols=symbols,
        pilot_mask=pilot_mask,
        known=np.broadcast_to(known, (Q, N, M)).copy(),
        data_slots=data_slots,
    )


def subcarrier_gains(taps: np.ndarray, N: int) -> np.ndarray:
    """``z_i = sum_j exp(-2j*pi*i*j/N) x_j`` along the last axis, via FFT."""
    taps = np.asarray(taps)
    if taps.shape[-1] > N:
        raise ValueError(f"tap length {taps.shape[-1]} exceeds N={N}")
    return np.fft.fft(taps, n=N, axis=-1)


def observe(frame: Frame, taps: np.ndarray, noise_var: float,
            rng: np.random.Generator) -> np.ndarray:
    """``y = s * z + w`` with circular Gaussian ``w`` of variance ``noise_var``."""
    N = frame.symbols.shape[-1]
    z = subcarrier_gains(taps, N)
    z = np.broadcast_to(z, frame.symbols.shape)
    w = complex_normal(rng, frame.symbols.shape, noise_var)
    y = frame.symbols * z + w
    frame.gains = np.array(z)
    frame.observations = y
    return y


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """I.i.d. circular complex Gaussian samples with variance ``var``."""
    scale = math.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
