"""Command-line entry point: ``fit-prior``, ``run`` and ``sweep``."""
from __future__ import annotations

import argparse
from dataclasses import replace
import logging
import os
import sys

import numpy as np

from . import channel_gen, config, harness, prior_fit

log = logging.getLogger("gampofdm")


def _load_spec(args) -> config.ExperimentSpec:
    spec = config.preset(args.preset)
    if args.config:
        spec = config.load_config(args.config, base=spec)
    if args.set:
        items = []
        for kv in args.set:
            if "=" not in kv:
                raise SystemExit(f"--set expects key=value, got {kv!r}")
            k, v = kv.split("=", 1)
            items.append((k.strip(), v.strip()))
        spec = config.apply_overrides(spec, items)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    return spec


def cmd_fit_prior(args) -> int:
    spec = _load_spec(args)
    seed = spec.prior.seed if args.seed is None else args.seed
    os.makedirs(args.out, exist_ok=True)
    ch = spec.channel
    log.info("generating %d realizations (L=%d)", spec.prior.realizations, spec.frame.L)
    real = channel_gen.generate_realizations(ch.sv, ch.pulses(), spec.frame.L,
                                             spec.prior.realizations, seed)
    if args.dump_realizations:
        channel_gen.save_realizations(os.path.join(args.out, "realizations.bin"), real)
    prior, fit, sw = prior_fit.fit_prior(real, max_iters=spec.prior.em_iters,
                                         tol=spec.prior.em_tol)
    path = os.path.join(args.out, "prior.txt")
    prior_fit.save_prior(prior, path)
    lam = prior.lam
    print(f"wrote {path}: L={prior.L}, EM iterations={fit.n_iter}, "
          f"peak lambda {lam.max():.3f} at lag {int(np.argmax(lam))}, "
          f"total PDP {prior.pdp.sum():.4f}")
    return 0


def _run(args, sweep: bool) -> int:
    spec = _load_spec(args)
    if not sweep:
        spec = replace(spec, sweep=config.SweepSpec(variable="ebn0_db", values=(spec.ebn0_db,)))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(config.dump_config(spec))
    result = harness.run_experiment(spec, workers=args.workers,
                                    prior_cache=os.path.join(args.out, "prior.txt"))
    paths = harness.emit_results(result, args.out)
    for r in result.rows:
        if r.checkpoint == "fin":
            print(f"{r.sweep_variable}={r.sweep_value:g} {r.algorithm:8s} "
                  f"BER={r.ber:.3e} NMSE={r.nmse_db:.2f} dB turbo={r.mean_turbo_iters:.2f} "
                  f"failures={r.failures}/{r.trials}")
    print("results:", paths["csv"])
    dead = result.total_failures()
    if dead:
        for v, alg in dead:
            log.error("every trial of %s failed at %s=%s", alg, spec.sweep.variable, v)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gampofdm", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--preset", default="desk", choices=sorted(config.PRESETS))
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    sp = sub.add_parser("fit-prior", help="generate channel realizations and fit the tap prior")
    common(sp)
    sp.add_argument("--dump-realizations", action="store_true",
                    help="also write realizations.bin (complex64, (L, count) header)")
    sp.set_defaults(func=cmd_fit_prior)

    sp = sub.add_parser("run", help="all arms at experiment.ebn0_db")
    common(sp)
    sp.set_defaults(func=lambda a: _run(a, sweep=False))

    sp = sub.add_parser("sweep", help="all arms over the sweep grid")
    common(sp)
    sp.set_defaults(func=lambda a: _run(a, sweep=True))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
