"""Monte Carlo driver: per-trial simulation, aggregation into result rows and
CSV / JSON-lines output.

Every trial derives its random streams from ``SeedSequence(seed,
spawn_key=(trial,))`` so results do not depend on scheduling or on the number
of workers. The same trial index reuses the same channel, bits and unit
noise at every sweep point (common random numbers across points and arms).
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
import io
import json
import logging
import math
import multiprocessing as mp
import os
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import baselines, channel_gen, ldpc, modem, prior_fit, turbo
from .config import ExperimentSpec

log = logging.getLogger(__name__)

CHECKPOINTS = (1, 2, "fin")

# fixed column order of the result tables
RESULT_COLUMNS = (
    "sweep_variable", "sweep_value", "algorithm", "checkpoint", "trials", "failures",
    "bit_errors", "bits", "ber", "nmse_db", "nmse_median_db", "mean_turbo_iters",
)
# wall-clock data lives in its own table so result tables stay reproducible
TIMING_COLUMNS = (
    "sweep_variable", "sweep_value", "algorithm", "trials", "mean_seconds_per_trial",
    "mean_seconds_per_turbo_iter", "mean_gamp_iters",
)


@dataclass
class ResultRow:
    sweep_variable: str
    sweep_value: float
    algorithm: str
    checkpoint: str
    trials: int
    failures: int
    bit_errors: int
    bits: int
    ber: float
    nmse_db: float
    nmse_median_db: float
    mean_turbo_iters: float


@dataclass
class TrialRecord:
    point: int
    sweep_value: float
    trial: int
    algorithm: str
    failed: bool = False
    error: str | None = None
    n_turbo: int = 0
    stop_reason: str = ""
    bit_errors: dict = field(default_factory=dict)  # checkpoint -> errors
    nmse: dict = field(default_factory=dict)  # checkpoint -> linear NMSE
    nmse_per_iter: list = field(default_factory=list)
    gamp_iters: int = 0
    seconds: float = 0.0


@dataclass
class PointSetup:
    value: float
    ebn0_db: float
    frame: modem.FrameConfig
    code: object
    perm: np.ndarray


@dataclass
class ExperimentResult:
    rows: list
    timing: list
    records: list

    def total_failures(self):
        """``(sweep_value, algorithm)`` pairs in which every trial failed."""
        out = []
        for r in self.rows:
            if r.checkpoint == "fin" and r.trials > 0 and r.failures == r.trials:
                out.append((r.sweep_value, r.algorithm))
        return out


def make_prior(spec: ExperimentSpec, cache_path=None) -> prior_fit.Gm2HmmPrior:
    """Load the tap prior from ``spec.prior.path`` or fit it from fresh
    realizations (optionally caching the result at ``cache_path``)."""
    if spec.prior.path:
        prior = prior_fit.load_prior(spec.prior.path)
        if prior.L != spec.frame.L:
            raise ValueError(f"prior has L={prior.L}, frame needs L={spec.frame.L}")
        return prior
    if cache_path and os.path.exists(cache_path):
        prior = prior_fit.load_prior(cache_path)
        if prior.L == spec.frame.L:
            return prior
    ch = spec.channel
    real = channel_gen.generate_realizations(ch.sv, ch.pulses(), spec.frame.L,
                                             spec.prior.realizations, spec.prior.seed)
    prior, _, _ = prior_fit.fit_prior(real, max_iters=spec.prior.em_iters, tol=spec.prior.em_tol)
    if cache_path:
        prior_fit.save_prior(prior, cache_path)
    return prior


def point_setups(spec: ExperimentSpec) -> list:
    fs = spec.frame
    codes = {}
    out = []
    for v in spec.sweep.values:
        Np, Mt, eb = fs.Np, fs.Mt, spec.ebn0_db
        if spec.sweep.variable == "Np":
            Np = int(v)
        elif spec.sweep.variable == "Mt":
            Mt = int(v)
        else:
            eb = float(v)
        cfg = modem.FrameConfig.for_efficiency(fs.N, fs.L, fs.M, Np, Mt, fs.eta,
                                               fs.codeword_len, coded=fs.coded)
        cfg = replace(cfg, noise_var=modem.noise_var_from_ebn0(eb, cfg.eta))
        key = (cfg.Mc, cfg.Mi)
        if key not in codes:
            if fs.coded:
                code = ldpc.generate_code(cfg.Mc, cfg.rate, seed=spec.code_seed)
                if code.k != cfg.Mi:
                    raise ldpc.CodeConstructionError(
                        f"code has k={code.k}, frame needs {cfg.Mi}")
            else:
                code = ldpc.UncodedCode(cfg.Mc)
            codes[key] = (code, modem.interleaver(cfg.Mc, spec.interleaver_seed))
        code, perm = codes[key]
        out.append(PointSetup(value=v, ebn0_db=eb, frame=cfg, code=code, perm=perm))
    return out


def _taps(spec, rng, Q):
    L = spec.frame.L
    if spec.channel.model == "awgn":
        x = np.zeros((Q, L), complex)
        x[:, 0] = 1.0
        return x
    ch = spec.channel
    pulses = ch.pulses()
    return np.stack([channel_gen.generate_taps(ch.sv, pulses, L, rng).taps for _ in range(Q)])


def _nmse(xhat, x):
    num = np.sum(np.abs(xhat - x) ** 2, axis=-1)
    den = np.maximum(np.sum(np.abs(x) ** 2, axis=-1), 1e-300)
    return float(np.mean(num / den))


def run_trial(spec: ExperimentSpec, prior, setup: PointSetup, point: int, trial: int):
    """All arms on one (sweep point, trial) draw."""
    ss = np.random.SeedSequence(spec.seed, spawn_key=(trial,))
    rng_bits, rng_chan, rng_noise = (np.random.default_rng(s) for s in ss.spawn(3))
    cfg, code = setup.frame, setup.code
    const = modem.build_constellation(cfg.M)
    info = rng_bits.integers(0, 2, code.k, dtype=np.uint8)
    frame = modem.assemble_frame(code.encode(info), cfg, rng_bits, setup.perm, const, info)
    taps = _taps(spec, rng_chan, cfg.Q)
    gains = modem.subcarrier_gains(taps, cfg.N)
    unit = modem.complex_normal(rng_noise, frame.symbols.shape, 1.0)
    y = frame.symbols * gains + math.sqrt(cfg.noise_var) * unit
    layout = turbo.FrameKnowledge.from_frame(frame)
    genie = turbo.Genie(taps=taps, gains=gains)
    records = []
    for alg in spec.algorithms:
        rec = TrialRecord(point=point, sweep_value=setup.value, trial=trial, algorithm=alg)
        t0 = time.perf_counter()
        if alg == "bsg":
            xh = np.empty_like(taps)
            for q in range(cfg.Q):
                states = prior_fit.map_states(prior_fit.state_posteriors(taps[q], prior))[:, 0]
                xh[q], _ = baselines.bsg_bound(y[q], frame.symbols[q], states, prior,
                                               cfg.noise_var)
            rec.nmse = {"fin": _nmse(xh, taps)}
            rec.nmse_per_iter = [rec.nmse["fin"]]
            rec.bit_errors = {"fin": 0}
        else:
            out = turbo.run_receiver(y, prior, code, cfg, spec.receiver, const, setup.perm,
                                     layout, alg, genie=genie)
            rec.failed, rec.error = out.failed, out.error
            rec.n_turbo, rec.stop_reason = out.n_turbo, out.stop_reason
            if out.iterations:
                rec.nmse_per_iter = [_nmse(it["xhat"], taps) for it in out.iterations]
                rec.gamp_iters = int(sum(it.get("gamp_iters", 0) for it in out.iterations))
                for c in CHECKPOINTS:
                    it = out.checkpoint(len(out.iterations) if c == "fin" else c)
                    rec.bit_errors[str(c)] = int(np.sum(it["info_hat"] != info))
                    rec.nmse[str(c)] = _nmse(it["xhat"], taps)
            else:
                rec.failed = True
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
    return records


_CTX = {}


def _worker_init(spec, prior, setups):
    _CTX.update(spec=spec, prior=prior, setups=setups)


def _worker_task(task):
    point, trial = task
    with threadpool_limits(limits=1):
        return run_trial(_CTX["spec"], _CTX["prior"], _CTX["setups"][point], point, trial)


def _db(v):
    return 10.0 * math.log10(v) if v > 0 else -math.inf


def aggregate(spec: ExperimentSpec, setups, records) -> tuple[list, list]:
    by = {}
    for r in records:
        by.setdefault((r.point, r.algorithm), []).append(r)
    rows, timing = [], []
    for p, setup in enumerate(setups):
        for alg in spec.algorithms:
            recs = sorted(by.get((p, alg), []), key=lambda r: r.trial)
            ok = [r for r in recs if not r.failed]
            nfail = len(recs) - len(ok)
            if nfail:
                log.warning("%s at %s=%s: %d of %d trials failed", alg, spec.sweep.variable,
                            setup.value, nfail, len(recs))
            k = 0 if alg == "bsg" else setup.code.k
            cps = ("fin",) if alg == "bsg" else CHECKPOINTS
            mean_turbo = float(np.mean([r.n_turbo for r in ok])) if ok else math.nan
            for c in cps:
                c = str(c)
                errs = int(sum(r.bit_errors[c] for r in ok))
                bits = k * len(ok)
                nm = np.array([r.nmse[c] for r in ok])
                rows.append(ResultRow(
                    sweep_variable=spec.sweep.variable, sweep_value=setup.value, algorithm=alg,
                    checkpoint=c, trials=len(recs), failures=nfail, bit_errors=errs, bits=bits,
                    ber=errs / bits if bits else math.nan,
                    nmse_db=_db(float(nm.mean())) if nm.size else math.nan,
                    nmse_median_db=_db(float(np.median(nm))) if nm.size else math.nan,
                    mean_turbo_iters=mean_turbo if alg != "bsg" else 0.0))
            secs = [r.seconds for r in recs]
            turbo_n = sum(max(r.n_turbo, 1) for r in recs)
            timing.append(dict(
                sweep_variable=spec.sweep.variable, sweep_value=setup.value, algorithm=alg,
                trials=len(recs), mean_seconds_per_trial=float(np.mean(secs)) if secs else math.nan,
                mean_seconds_per_turbo_iter=sum(secs) / turbo_n if turbo_n else math.nan,
                mean_gamp_iters=float(np.mean([r.gamp_iters for r in recs])) if recs else math.nan))
    return rows, timing


def run_experiment(spec: ExperimentSpec, prior=None, workers: int = 1,
                   prior_cache=None) -> ExperimentResult:
    """Run every (sweep point, trial, arm) and aggregate."""
    needs_prior = any(a != "pcsi" for a in spec.algorithms)
    if prior is None:
        if needs_prior:
            prior = make_prior(spec, prior_cache)
        else:
            prior = prior_fit.Gm2HmmPrior.iid_gaussian(np.full(spec.frame.L, 1.0 / spec.frame.L))
    setups = point_setups(spec)
    tasks = [(p, t) for p in range(len(setups)) for t in range(spec.trials)]
    records = []
    if workers <= 1:
        _worker_init(spec, prior, setups)
        for task in tasks:
            records.extend(_worker_task(task))
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_worker_init, initargs=(spec, prior, setups)) as pool:
            for recs in pool.imap_unordered(_worker_task, tasks, chunksize=4):
                records.extend(recs)
    records.sort(key=lambda r: (r.point, r.trial, spec.algorithms.index(r.algorithm)))
    rows, timing = aggregate(spec, setups, records)
    return ExperimentResult(rows=rows, timing=timing, records=records)


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, columns=RESULT_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = asdict(r) if not isinstance(r, dict) else r
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


def rows_to_jsonl(rows, columns=RESULT_COLUMNS) -> str:
    lines = []
    for r in rows:
        d = asdict(r) if not isinstance(r, dict) else r
        lines.append(json.dumps({c: _json_safe(d[c]) for c in columns}))
    return "".join(line + "\n" for line in lines)


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return _fmt(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _parse_value(col, text):
    if col in ("sweep_variable", "algorithm", "checkpoint"):
        return text
    if col in ("trials", "failures", "bit_errors", "bits"):
        return int(text)
    return float(text)


def read_results_csv(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [ResultRow(**{c: _parse_value(c, v) for c, v in zip(header, row)}) for row in rd]


def read_results_jsonl(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(ResultRow(**{c: _parse_value(c, str(d[c])) if isinstance(d[c], str)
                                        and c not in ("sweep_variable", "algorithm", "checkpoint")
                                        else d[c] for c in RESULT_COLUMNS}))
    return out


def emit_results(result: ExperimentResult, out_dir, formats=("csv", "jsonl")) -> dict:
    """Write ``results.csv`` / ``results.jsonl``, ``timing.csv`` and
    ``diagnostics.jsonl`` into ``out_dir``; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    if "csv" in formats:
        paths["csv"] = os.path.join(out_dir, "results.csv")
        with open(paths["csv"], "w") as fh:
            fh.write(rows_to_csv(result.rows))
    if "jsonl" in formats:
        paths["jsonl"] = os.path.join(out_dir, "results.jsonl")
        with open(paths["jsonl"], "w") as fh:
            fh.write(rows_to_jsonl(result.rows))
    paths["timing"] = os.path.join(out_dir, "timing.csv")
    with open(paths["timing"], "w") as fh:
        fh.write(rows_to_csv(result.timing, TIMING_COLUMNS))
    paths["diagnostics"] = os.path.join(out_dir, "diagnostics.jsonl")
    with open(paths["diagnostics"], "w") as fh:
        for r in result.records:
            fh.write(json.dumps(asdict(r), default=_json_safe) + "\n")
    return paths


def ebn0_at_ber(values, bers, target=1e-3):
    """Lowest Eb/N0 where the BER curve crosses ``target``, by linear
    interpolation of log10(BER); ``inf`` if never reached."""
    prev = None
    for v, b in sorted(zip(values, bers)):
        if b <= target:
            if prev is None:
                return float(v)
            v0, b0 = prev
            lb0 = math.log10(b0)
            lb1 = math.log10(max(b, 1e-12))
            frac = (lb0 - math.log10(target)) / (lb0 - lb1) if lb0 != lb1 else 1.0
            return float(v0 + frac * (v - v0))
        prev = (v, b)
    return math.inf


def benchmark_gamp_iteration(N: int, L: int, M: int = 4, reps: int = 30, seed=0) -> float:
    """Median wall time of one GAMP iteration on a random GM2 instance."""
    from .gamp import InputChannelGm2, OutputChannelQam, gamp_run

    rng = np.random.default_rng(seed)
    const = modem.build_constellation(M)
    lam = np.full(L, 0.2)
    prior = InputChannelGm2(lam=lam, nu0=np.full(L, 1e-3 / L), nu1=np.full(L, 5.0 / L))
    x = modem.complex_normal(rng, L, 1.0 / L)
    s = const.points[rng.integers(0, const.size, N)]
    y = s * np.fft.fft(x, N) + modem.complex_normal(rng, N, 0.01)
    out = OutputChannelQam(y=y, log_beta=np.zeros((N, const.size)), points=const.points,
                           noise_var=0.01)
    times = []
    with threadpool_limits(limits=1):
        gamp_run(out, prior, max_iters=2, tol=0.0)
        for _ in range(reps):
            t0 = time.perf_counter()
            gamp_run(out, prior, max_iters=5, tol=0.0)
            times.append((time.perf_counter() - t0) / 5)
    return float(np.median(times))
