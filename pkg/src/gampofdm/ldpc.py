"""Irregular LDPC codes: construction, systematic encoding, SISO decoding.

LLR sign convention (repo-wide): ``llr = log Pr{bit=0} / Pr{bit=1}``, so a
positive value favours bit 0.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

log = logging.getLogger(__name__)

LLR_MAX = 30.0

# variable-node degree distribution (node perspective), mean 3.05
DEFAULT_DEGREES = {2: 0.40, 3: 0.45, 6: 0.15}


class CodeConstructionError(RuntimeError):
    pass


@dataclass
class LdpcCode:
    n: int
    checks: list  # list of int arrays: variable indices per check
    info_pos: np.ndarray  # systematic positions (k,)
    parity_pos: np.ndarray  # (m,)
    parity_map: np.ndarray  # (m, k) uint8, c[parity_pos] = parity_map @ c[info_pos] mod 2

    def __post_init__(self):
        self.edge_chk = np.concatenate([np.full(len(c), i) for i, c in enumerate(self.checks)])
        self.edge_var = np.concatenate([np.asarray(c, dtype=np.int64) for c in self.checks])
        self.m = len(self.checks)
        self._order_var = np.argsort(self.edge_var, kind="stable")

    @property
    def k(self) -> int:
        return self.info_pos.size

    @property
    def rate(self) -> float:
        return self.k / self.n

    def column_weights(self) -> np.ndarray:
        return np.bincount(self.edge_var, minlength=self.n)

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        return np.bincount(self.edge_chk, weights=bits[self.edge_var], minlength=self.m) % 2

    def encode(self, info_bits) -> np.ndarray:
        b = np.asarray(info_bits, dtype=np.int64)
        if b.shape != (self.k,):
            raise ValueError(f"expected {self.k} info bits, got shape {b.shape}")
        c = np.zeros(self.n, dtype=np.uint8)
        c[self.info_pos] = b
        c[self.parity_pos] = (self.parity_map.astype(np.int64) @ b) % 2
        return c

    def extract_info(self, codeword) -> np.ndarray:
        return np.asarray(codeword)[self.info_pos]

    def siso_decode(self, prior_llr, max_iters: int = 25):
        """Sum-product decoding.

        Returns ``(extrinsic, posterior, converged, n_iter)`` with
        ``posterior == prior + extrinsic`` exactly. Stops as soon as the hard
        decisions satisfy every check.
        """
        prior = np.clip(np.asarray(prior_llr, dtype=float), -LLR_MAX, LLR_MAX)
        if prior.shape != (self.n,):
            raise ValueError(f"expected {self.n} LLRs, got shape {prior.shape}")
        ev, ec, m = self.edge_var, self.edge_chk, self.m
        v2c = prior[ev]
        converged = not np.any(self.syndrome(prior < 0))
        n_iter = 0
        while True:
            c2v = _check_update(v2c, ec, m)
            ext = np.clip(np.bincount(ev, weights=c2v, minlength=self.n), -LLR_MAX, LLR_MAX)
            post = prior + ext
            if converged or n_iter >= max_iters:
                break
            n_iter += 1
            if not np.any(self.syndrome(post < 0)):
                converged = True
                break
            v2c = np.clip(post[ev] - c2v, -LLR_MAX, LLR_MAX)
        return ext, post, converged, n_iter


def _phi(x):
    x = np.clip(x, 1e-12, 2 * LLR_MAX)
    return -np.log(np.tanh(0.5 * x))


def _check_update(v2c, edge_chk, m):
    mag = _phi(np.abs(v2c))
    neg = (v2c < 0).astype(np.int64)
    tot = np.bincount(edge_chk, weights=mag, minlength=m)
    par = np.bincount(edge_chk, weights=neg, minlength=m).astype(np.int64)
    out_mag = _phi(np.maximum(tot[edge_chk] - mag, 0.0))
    sign = 1.0 - 2.0 * ((par[edge_chk] - neg) & 1)
    return np.clip(sign * out_mag, -LLR_MAX, LLR_MAX)


@dataclass
class UncodedCode:
    """Identity 'code' for uncoded reference runs."""

    n: int

    @property
    def k(self):
        return self.n

    @property
    def rate(self):
        return 1.0

    def encode(self, info_bits):
        return np.asarray(info_bits, dtype=np.uint8).copy()

    def extract_info(self, codeword):
        return np.asarray(codeword)

    def syndrome(self, bits):
        return np.zeros(0, dtype=np.int64)

    def siso_decode(self, prior_llr, max_iters: int = 25):
        prior = np.clip(np.asarray(prior_llr, dtype=float), -LLR_MAX, LLR_MAX)
        return np.zeros_like(prior), prior.copy(), True, 0


def _degree_sequence(n, degrees, rng):
    ds = sorted(degrees)
    probs = np.array([degrees[d] for d in ds], float)
    probs /= probs.sum()
    counts = np.floor(probs * n).astype(int)
    counts[np.argmax(probs)] += n - counts.sum()
    seq = np.repeat(ds, counts)
    rng.shuffle(seq)
    return seq


def _build_graph(n, m, degrees, rng):
    """Progressive edge placement: each new edge goes to a least-loaded check
    that does not close a 4-cycle, when one exists."""
    vdeg = _degree_sequence(n, degrees, rng)
    var_checks = [[] for _ in range(n)]
    chk_vars = [[] for _ in range(m)]
    cdeg = np.zeros(m, dtype=np.int64)
    order = np.argsort(vdeg, kind="stable")
    n_short = 0
    for v in order:
        for _ in range(vdeg[v]):
            mine = var_checks[v]
            banned = set(mine)
            for c in mine:
                for v2 in chk_vars[c]:
                    banned.update(var_checks[v2])
            load = cdeg.astype(float) + rng.random(m) * 0.5
            if banned:
                idx = np.fromiter(banned, dtype=np.int64)
                load[idx] = np.inf
            c = int(np.argmin(load))
            if not np.isfinite(load[c]):
                n_short += 1
                load = cdeg.astype(float) + rng.random(m) * 0.5
                load[np.asarray(mine, dtype=np.int64)] = np.inf
                c = int(np.argmin(load))
            var_checks[v].append(c)
            chk_vars[c].append(int(v))
            cdeg[c] += 1
    return chk_vars, n_short


def _gf2_rref(checks, n):
    """Reduced row echelon form over GF(2) with column pivoting.

    Returns ``(rank, pivot_cols, reduced)`` where ``reduced`` is a dense uint8
    matrix with the pivot rows first.
    """
    m = len(checks)
    H = np.zeros((m, n), dtype=np.uint8)
    for i, c in enumerate(checks):
        H[i, c] ^= 1
    W = (n + 63) // 64
    packed = np.packbits(H, axis=1, bitorder="little")
    packed = np.pad(packed, ((0, 0), (0, W * 8 - packed.shape[1]))).view(np.uint64)
    pivots = []
    row = 0
    for col in range(n):
        if row == m:
            break
        w, b = divmod(col, 64)
        bit = np.uint64(1) << np.uint64(b)
        has = (packed[row:, w] & bit) != 0
        hits = np.flatnonzero(has)
        if hits.size == 0:
            continue
        p = row + hits[0]
        if p != row:
            packed[[row, p]] = packed[[p, row]]
        mask = (packed[:, w] & bit) != 0
        mask[row] = False
        packed[mask] ^= packed[row]
        pivots.append(col)
        row += 1
    dense = np.unpackbits(packed.view(np.uint8), axis=1, bitorder="little")[:, :n]
    return row, np.array(pivots, dtype=np.int64), dense


def code_from_checks(checks, n) -> LdpcCode:
    """Build an encodable code from a full-rank check list."""
    checks = [np.asarray(sorted(c), dtype=np.int64) for c in checks]
    rank, pivots, red = _gf2_rref(checks, n)
    if rank < len(checks):
        raise CodeConstructionError(f"parity-check matrix has rank {rank} < {len(checks)}")
    free = np.setdiff1d(np.arange(n), pivots)
    parity_map = red[:rank][:, free].astype(np.uint8)
    return LdpcCode(n=n, checks=checks, info_pos=free, parity_pos=pivots, parity_map=parity_map)


def generate_code(n: int, rate: float, seed=0, degrees=None, retries: int = 20) -> LdpcCode:
    """Random irregular LDPC code with ``round(n * (1 - rate))`` checks."""
    if not 0 < rate < 1:
        raise ValueError("rate must lie in (0, 1)")
    m = int(round(n * (1 - rate)))
    if m < 1 or m >= n:
        raise ValueError("n and rate give no parity checks")
    degrees = dict(DEFAULT_DEGREES if degrees is None else degrees)
    # degree cannot exceed the number of checks
    degrees = {min(d, m): p for d, p in degrees.items()}
    rng = np.random.default_rng(seed)
    for attempt in range(retries):
        chk_vars, n_short = _build_graph(n, m, degrees, rng)
        if any(len(c) == 0 for c in chk_vars):
            continue
        try:
            code = code_from_checks(chk_vars, n)
        except CodeConstructionError:
            log.debug("attempt %d: rank deficient", attempt)
            continue
        if n_short:
            log.debug("%d edges could not avoid 4-cycles", n_short)
        return code
    raise CodeConstructionError(f"no full-rank code after {retries} attempts (n={n}, m={m})")


def four_cycle_free_fraction(code: LdpcCode) -> float:
    """Fraction of variable nodes that lie on no length-4 cycle."""
    var_checks = [[] for _ in range(code.n)]
    for ci, c in enumerate(code.checks):
        for v in c:
            var_checks[v].append(ci)
    bad = np.zeros(code.n, dtype=bool)
    for c in code.checks:
        for a_i, a in enumerate(c):
            sa = set(var_checks[a])
            for b in c[a_i + 1:]:
                if len(sa.intersection(var_checks[b])) > 1:
                    bad[a] = bad[b] = True
    return 1.0 - bad.mean()


def save_checks(code: LdpcCode, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# n {code.n}\n")
        for c in code.checks:
            fh.write(" ".join(str(int(v)) for v in c) + "\n")


def load_checks(path, n: int | None = None) -> LdpcCode:
    """Load a parity-check matrix stored as one line of column indices per
    check; ``n`` comes from a ``# n <n>`` header when not given."""
    checks = []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if n is None and len(parts) == 2 and parts[0] == "n":
                    n = int(parts[1])
                continue
            checks.append([int(t) for t in s.split()])
    if n is None:
        n = 1 + max(max(c) for c in checks)
    return code_from_checks(checks, n)
