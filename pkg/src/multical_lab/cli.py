"""Command-line entry point ``mclab``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Sequence

from . import bounds, codes, config, experiments, harness, hardinstance as hi, learners, metrics
from .core import FiniteInstance, GroupFamily, PredictionGrid, RandomizedPredictor, load_json, stream
from .properties import parse_property, spec_for_law


def _emit(obj: Any, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        harness.atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _load(path: str, kind: type):
    obj = load_json(path)
    if not isinstance(obj, kind):
        raise SystemExit(f"{path} does not hold a {kind.__name__}")
    return obj


def cmd_codes_gen(a: argparse.Namespace) -> None:
    seed = config.resolve_seed(a.seed, None)
    if a.kind == "lowcorr":
        code = codes.search_low_correlation(a.n, a.k, a.rho, seed, a.restarts)
    elif a.kind == "dyadic":
        code = codes.dyadic_signatures(a.m, seed, k_override=a.k_override, relaxed=a.relaxed, max_restarts=a.restarts)
    else:
        code = codes.search_packing(a.d, a.min_dist, a.count, seed, a.budget)
    _emit(code.to_json(), a.out)


def cmd_instance_gen(a: argparse.Namespace) -> None:
    seed = config.resolve_seed(a.seed, None)
    prop = parse_property(a.property)
    sig = codes.dyadic_signatures(a.m, seed, k_override=a.k_override, relaxed=a.k_override is not None)
    groups = hi.build_hard_groups(a.m, sig)
    code = experiments.staircase_code(a.m, seed)
    theta = a.theta if a.theta is not None else 0
    st = hi.build_staircase(a.m, None, code, theta, prop)
    rc = hi.realized_constants(sig, code, st.gamma, prop)
    os.makedirs(a.out, exist_ok=True)
    files = {
        "instance.json": hi.to_instance(st).to_json(),
        "groups.json": groups.family.to_json(),
        "staircase.json": st.to_json(),
        "signatures.json": sig.to_json(),
        "coefficients.json": hi.threshold_coefficients(a.m, sig).to_json(),
        "constants.json": rc.to_json(),
    }
    for name, obj in files.items():
        harness.atomic_write(os.path.join(a.out, name), json.dumps(obj, sort_keys=True) + "\n")
    print(json.dumps({"out": a.out, "groups": len(groups), **rc.to_json()}, indent=2))


def cmd_metrics_eval(a: argparse.Namespace) -> None:
    P = _load(a.instance, FiniteInstance)
    Q = _load(a.predictor, RandomizedPredictor)
    G = _load(a.groups, GroupFamily)
    prop = parse_property(a.property) if a.property else spec_for_law(P.laws[0])
    tab = metrics.population_bias_table(P, Q, G, prop)
    out = {"mc": metrics.mc(tab), f"mc_lp_{a.p:g}": metrics.mc_lp(tab, a.p), f"smc_lp_{a.p:g}": metrics.smc_lp(tab, a.p)}
    if a.target:
        out["prediction_error"] = metrics.prediction_error(P, Q, json.loads(a.target))
    if a.csv:
        harness.atomic_write(a.csv, tab.to_csv())
    _emit(out, None)


def cmd_learn_run(a: argparse.Namespace) -> None:
    seed = config.resolve_seed(a.seed, None)
    P = _load(a.instance, FiniteInstance)
    prop = parse_property(a.property) if a.property else spec_for_law(P.laws[0])
    os.makedirs(a.out, exist_ok=True)
    if a.forecaster == "reference":
        n_groups = len(_load(a.groups, GroupFamily)) if a.groups else 1
        K = a.K or learners.select_grid_size(a.T, n_groups)
        f = learners.ReferenceForecaster(PredictionGrid.centers(K), prop, a.alpha0)
        S = learners.run_online(P, f, a.T, seed)
        S.save(os.path.join(a.out, "transcript.npz"))
        Q = learners.averaged_batch_predictor(S)
    else:
        if not a.groups:
            raise SystemExit("the cellwise learner needs --groups")
        x, y = P.sample(a.T, stream("cellwise", seed, a.T))
        Q = learners.cellwise_baseline(x, y, _load(a.groups, GroupFamily))
    harness.atomic_write(os.path.join(a.out, "predictor.json"), json.dumps(Q.to_json()) + "\n")
    print(os.path.join(a.out, "predictor.json"))


def cmd_decode_run(a: argparse.Namespace) -> None:
    with open(a.staircase) as fh:
        st = hi.StaircaseInstance.from_json(json.load(fh))
    Q = _load(a.predictor, RandomizedPredictor)
    idx = learners.nearest_staircase_decoder(Q, st)
    _emit({"decoded_index": idx, "true_index": st.theta_index, "correct": idx == st.theta_index}, None)


def cmd_bounds_report(a: argparse.Namespace) -> None:
    rep = bounds.transfer_report(a.K, a.G, a.T, a.p, a.C, a.c_star)
    if a.csv:
        harness.atomic_write(a.csv, harness.rows_to_csv([rep.to_json()]))
    _emit(rep.to_json(), a.out)


def cmd_experiment(a: argparse.Namespace) -> None:
    cfg = config.load_config(a.config, a.name, a.seed, output_dir=a.out, workers=a.workers)
    out = experiments.run_experiment(cfg)
    sys.stdout.write(out["summary"])
    print(f"\nwrote {os.path.dirname(out['paths']['summary.md'])} in {out['wall_time']:.1f}s")


def cmd_report(a: argparse.Namespace) -> None:
    rows = harness.read_csv(a.csv)
    filters = dict(f.split("=", 1) for f in a.filter)
    print(harness.report(rows, filters, tuple(a.by.split(","))))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mclab", description="Multicalibration sample-complexity lab")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    c = sub.add_parser("codes").add_subparsers(dest="action", required=True).add_parser("gen", help="generate a code")
    c.add_argument("--kind", choices=["lowcorr", "dyadic", "packing"], required=True)
    c.add_argument("--n", type=int, default=8)
    c.add_argument("--k", type=int, default=40)
    c.add_argument("--rho", type=float, default=0.75)
    c.add_argument("--m", type=int, default=16)
    c.add_argument("--k-override", type=int)
    c.add_argument("--relaxed", action="store_true")
    c.add_argument("--d", type=int, default=8)
    c.add_argument("--min-dist", type=int, default=1)
    c.add_argument("--count", type=int, default=16)
    c.add_argument("--budget", type=int, default=100_000)
    c.add_argument("--restarts", type=int, default=10)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_codes_gen)

    i = sub.add_parser("instance").add_subparsers(dest="action", required=True).add_parser("gen", help="build a hard instance")
    i.add_argument("--m", type=int, required=True)
    i.add_argument("--property", default="mean")
    i.add_argument("--k-override", type=int)
    i.add_argument("--theta", type=int)
    i.add_argument("--seed", type=int)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_instance_gen)

    mt = sub.add_parser("metrics").add_subparsers(dest="action", required=True).add_parser("eval", help="population metrics")
    mt.add_argument("--instance", required=True)
    mt.add_argument("--predictor", required=True)
    mt.add_argument("--groups", required=True)
    mt.add_argument("--property")
    mt.add_argument("--p", type=float, default=2.0)
    mt.add_argument("--target", help="JSON list of per-context targets for the prediction error")
    mt.add_argument("--csv", help="write the bias table here")
    mt.set_defaults(func=cmd_metrics_eval)

    ln = sub.add_parser("learn").add_subparsers(dest="action", required=True).add_parser("run", help="run a learner")
    ln.add_argument("--instance", required=True)
    ln.add_argument("--T", type=int, required=True)
    ln.add_argument("--forecaster", choices=["reference", "cellwise"], default="reference")
    ln.add_argument("--groups")
    ln.add_argument("--property")
    ln.add_argument("--K", type=int)
    ln.add_argument("--alpha0", type=float, default=1.0)
    ln.add_argument("--seed", type=int)
    ln.add_argument("--out", required=True)
    ln.set_defaults(func=cmd_learn_run)

    d = sub.add_parser("decode").add_subparsers(dest="action", required=True).add_parser("run", help="nearest-staircase decoding")
    d.add_argument("--staircase", required=True)
    d.add_argument("--predictor", required=True)
    d.set_defaults(func=cmd_decode_run)

    b = sub.add_parser("bounds").add_subparsers(dest="action", required=True).add_parser("report", help="transfer terms")
    b.add_argument("--K", type=int, required=True)
    b.add_argument("--G", type=int, required=True)
    b.add_argument("--T", type=int, required=True)
    b.add_argument("--p", type=float, default=1.0)
    b.add_argument("--C", type=float, default=bounds.FREEDMAN_C)
    b.add_argument("--c-star", type=float)
    b.add_argument("--csv")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bounds_report)

    e = sub.add_parser("experiment", help="run E1, E2 or E3")
    e.add_argument("name", choices=config.EXPERIMENTS)
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.add_argument("--workers", type=int)
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="summarize a trials CSV")
    r.add_argument("csv")
    r.add_argument("--filter", action="append", default=[], help="key=value, repeatable")
    r.add_argument("--by", default="m,T")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
