"""Experiment configuration: a flat ``section.key = value`` text format and
named presets.

Example::

    # comments start with '#'
    frame.N = 256
    experiment.algorithms = gamp_mc, gamp, lmmse, pcsi
    sweep.variable = ebn0_db
    sweep.values = 6, 7, 8, 9

Every key maps onto a field of :class:`ExperimentSpec` or of one of its
nested config dataclasses. Unknown keys are an error.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace, asdict
import typing

from .channel_gen import PulsePair, SalehValenzuelaParams
from .turbo import ALGORITHMS, ReceiverConfig

ARMS = ALGORITHMS + ("bsg",)
SWEEP_VARIABLES = ("ebn0_db", "Np", "Mt")


@dataclass(frozen=True)
class FrameSpec:
    """Frame geometry; code rate and OFDM-symbol count follow from ``eta``."""

    N: int = 256
    L: int = 64
    M: int = 4
    Np: int = 0
    Mt: int = 112
    eta: float = 2.0
    codeword_len: int = 2000
    coded: bool = True


@dataclass(frozen=True)
class ChannelSpec:
    model: str = "sv"  # "sv" (clustered multipath) or "awgn" (unit flat gain)
    rolloff: float = PulsePair.rolloff
    baud_ns: float = PulsePair.T
    halfwidth: int = PulsePair.halfwidth
    sv: SalehValenzuelaParams = field(default_factory=SalehValenzuelaParams)

    def pulses(self) -> PulsePair:
        return PulsePair(rolloff=self.rolloff, T=self.baud_ns, halfwidth=self.halfwidth)


@dataclass(frozen=True)
class PriorSpec:
    path: str = ""  # load from here when set, else fit
    realizations: int = 10000
    seed: int = 12345
    em_iters: int = 500
    em_tol: float = 1e-6


@dataclass(frozen=True)
class SweepSpec:
    variable: str = "ebn0_db"
    values: tuple = (8.0,)


@dataclass(frozen=True)
class ExperimentSpec:
    frame: FrameSpec = field(default_factory=FrameSpec)
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    algorithms: tuple = ("gamp_mc", "gamp", "lmmse", "pcsi")
    ebn0_db: float = 10.0  # used when the sweep variable is not ebn0_db
    trials: int = 200
    seed: int = 1
    code_seed: int = 7
    interleaver_seed: int = 11

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.sweep.values:
            raise ValueError("sweep grid is empty")
        if self.sweep.variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep.variable must be one of {SWEEP_VARIABLES}")
        bad = [a for a in self.algorithms if a not in ARMS]
        if bad or not self.algorithms:
            raise ValueError(f"unknown algorithms {bad}; choose from {ARMS}")
        if self.channel.model not in ("sv", "awgn"):
            raise ValueError("channel.model must be 'sv' or 'awgn'")


# section name -> attribute path on ExperimentSpec
_SECTIONS = {
    "frame": ("frame",),
    "receiver": ("receiver",),
    "channel": ("channel",),
    "sv": ("channel", "sv"),
    "prior": ("prior",),
    "sweep": ("sweep",),
    "experiment": (),
}


def _coerce(text: str, tp, name: str):
    text = text.strip()
    origin = typing.get_origin(tp)
    if tp is bool or tp == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if tp is tuple or origin is tuple:
        return tuple(v.strip() for v in text.split(",") if v.strip())
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    if tp is str:
        return text
    # Optional[...] / unions: try float, then None
    if text.lower() in ("none", ""):
        return None
    return float(text)


def _resolved_types(cls):
    return typing.get_type_hints(cls)


def _set(obj, path, key, raw, name):
    if not path:
        hints = _resolved_types(type(obj))
        if key not in hints:
            raise KeyError(f"unknown config key {name!r}")
        return replace(obj, **{key: _coerce(raw, hints[key], name)})
    child = getattr(obj, path[0])
    return replace(obj, **{path[0]: _set(child, path[1:], key, raw, name)})


def apply_overrides(spec: ExperimentSpec, items) -> ExperimentSpec:
    """Apply ``(dotted_key, text)`` pairs in order."""
    for name, raw in items:
        section, _, key = name.rpartition(".")
        if section not in _SECTIONS:
            raise KeyError(f"unknown config section in {name!r}")
        spec = _set(spec, _SECTIONS[section], key, raw, name)
    return _normalise(spec)


def _normalise(spec: ExperimentSpec) -> ExperimentSpec:
    sw = spec.sweep
    nums = tuple(float(v) for v in sw.values)
    if sw.variable in ("Np", "Mt"):
        nums = tuple(int(round(v)) for v in nums)
    return replace(spec, sweep=replace(sw, values=nums),
                   algorithms=tuple(str(a) for a in spec.algorithms))


def parse_config_text(text: str):
    items = []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = s.split("=", 1)
        items.append((k.strip(), v.strip()))
    return items


def load_config(path, base: ExperimentSpec | None = None) -> ExperimentSpec:
    with open(path) as fh:
        items = parse_config_text(fh.read())
    return apply_overrides(base or ExperimentSpec(), items)


def _flatten(obj, prefix):
    out = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        if hasattr(v, "__dataclass_fields__"):
            continue
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        out.append((f"{prefix}{f.name}", v))
    return out


def dump_config(spec: ExperimentSpec) -> str:
    """Render ``spec`` in the flat format (round-trips through
    :func:`load_config`)."""
    lines = []
    for section, path in _SECTIONS.items():
        obj = spec
        for p in path:
            obj = getattr(obj, p)
        for k, v in _flatten(obj, section + "."):
            lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


PRESETS = {
    # desk scale: 64 taps span the same 1 us window as the full setup, so the
    # bandwidth drops to 64 MHz and the sync offset scales with it
    "desk": [("channel.baud_ns", "15.625"), ("sv.sync_offset_lags", "5")],
    "smoke": [("channel.baud_ns", "15.625"), ("sv.sync_offset_lags", "5"),
              ("experiment.trials", "10"), ("prior.realizations", "1000")],
    # full scale: 1024 subcarriers, ~10k-bit codewords, 5000 trials per point
    "full": [
        ("frame.N", "1024"), ("frame.L", "256"), ("frame.Mt", "448"),
        ("frame.codeword_len", "10000"), ("experiment.trials", "5000"),
        ("prior.realizations", "10000"),
    ],
}


def preset(name: str) -> ExperimentSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return apply_overrides(ExperimentSpec(), PRESETS[name])


def spec_as_dict(spec: ExperimentSpec) -> dict:
    return asdict(spec)
