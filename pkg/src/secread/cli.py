"""Command-line experiment harness.

Subcommands: ``gen-topology``, ``run``, ``cost-bounds``, ``analyze`` and
``keygen``.  ``run`` reads an optional JSON config and applies flag
overrides on top; every artifact it writes carries the hash of the resolved
config.  All randomness fans out from one master seed through labeled
sub-seeds, so a run is reproducible from (config, seed).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    boxplot_stats,
    error_trend,
    increment_correlation,
    round_correlation,
    summarize_correlation,
)
from .crypto import PROFILES, dump_paillier, dump_signing, paillier_keygen, signing_keygen
from .protocol import (
    RoundResult,
    baseline_cost,
    cost_bounds,
    nonaggregation_cost,
    pary_cost,
    pary_n,
    run_plain_round,
)
from .recovery import CSV_FIELDS, stream_reconstruct
from .secure import Attack, SecureSession, readings_map
from .topology import (
    Topology,
    gen_chain,
    gen_pary_tree,
    gen_random_tree,
    gen_star,
    load_topology,
    save_topology,
)
from .trace import load_trace, synthesize_trace

log = logging.getLogger("secread")

DEFAULTS = {
    "topology": {"kind": "random", "n": 128},
    "M": None,
    "m_ratio": 0.3,
    "rounds": 50,
    "trace": {"synthetic": {"target_corr": 0.9995}},
    "mode": "plain",
    "profile": "test-512",
    "scale": 2**16,
    "tol": 1e-6,
    "bound_mode": "estimated",
    "bound_samples": 2000,
    "k": None,
    "attacks": [],
    "seed": 0,
}


class InvariantViolation(RuntimeError):
    pass


def sub_seed(master: int, label: str) -> int:
    """Deterministic 63-bit seed for one component of a run."""
    h = hashlib.sha256(f"{master}/{label}".encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# -- topology helpers ---------------------------------------------------------


def build_topology(spec: dict, seed: int) -> Topology:
    kind = spec.get("kind", "random")
    if kind == "random":
        return gen_random_tree(int(spec["n"]), int(spec.get("seed", seed)),
                               int(spec.get("max_candidates", 2)))
    if kind == "pary":
        return gen_pary_tree(int(spec["p"]), int(spec["L"]))
    if kind == "chain":
        return gen_chain(int(spec["n"]))
    if kind == "star":
        return gen_star(int(spec["n"]))
    if kind == "file":
        return load_topology(spec["path"])
    raise ValueError(f"unknown topology kind {kind!r}")


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_gen_topology(args) -> int:
    out = Path(args.out)
    if args.random:
        out.mkdir(parents=True, exist_ok=True)
        for s in range(args.seed, args.seed + args.seeds):
            save_topology(gen_random_tree(args.n, s, args.max_candidates), out / f"random_n{args.n}_seed{s}.json")
        print(f"wrote {args.seeds} topologies to {out}")
        return 0
    if args.pary:
        topo = gen_pary_tree(*args.pary)
    elif args.chain:
        topo = gen_chain(args.chain)
    elif args.star:
        topo = gen_star(args.star)
    else:
        print("choose one of --random, --pary, --chain, --star", file=sys.stderr)
        return 2
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "topology.json"
    save_topology(topo, out)
    print(f"wrote {topo.n}-node topology to {out}")
    return 0


# -- run ----------------------------------------------------------------------


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            cfg = _merge(cfg, json.load(fh))
    over: dict = {}
    if args.topology:
        over["topology"] = {"kind": args.topology}
        if args.topology == "file":
            over["topology"]["path"] = args.topology_file
        elif args.topology == "pary":
            over["topology"].update(p=args.pary[0], L=args.pary[1])
    if args.n is not None:
        over.setdefault("topology", dict(cfg["topology"]))["n"] = args.n
    if args.trace:
        over["trace"] = {"file": args.trace}
    if args.corr is not None:
        over["trace"] = {"synthetic": {"target_corr": args.corr}}
    for key in ("M", "m_ratio", "rounds", "mode", "profile", "tol", "bound_mode", "seed", "k", "scale"):
        val = getattr(args, key)
        if val is not None:
            over[key] = val
    if args.attack:
        over["attacks"] = list(args.attack)
    cfg = _merge(cfg, over)
    if cfg["topology"].get("kind") != "random" and "n" in cfg["topology"] and cfg["topology"]["kind"] == "pary":
        cfg["topology"].pop("n")
    return cfg


def _check(cond: bool, msg: str, violations: list[str]) -> None:
    if not cond:
        log.error("invariant violated: %s", msg)
        violations.append(msg)


def _secure_collector(session: SecureSession, M: int, scale: int, attacks: dict, events: dict,
                      violations: list[str]):
    def collect(t, topo, d):
        plain = run_plain_round(topo, d, M, scale=scale)
        round_attacks = attacks.get(t, [])
        res = session.run_round(readings_map(topo, d), t, round_attacks)
        events[t] = {
            "rejections": [{"at": at, "id": v.id, "reason": v.reason} for at, v in res.rejections],
            "retransmissions": res.retransmissions,
            "attacks": [a.kind.value for a in round_attacks],
        }
        _check(res.y_int == plain.y_int, f"round {t}: secure y differs from quantized plain y",
               violations)
        if round_attacks:
            _check(len(res.rejections) >= len(round_attacks),
                   f"round {t}: injected packet was not rejected", violations)
        for at, v in res.rejections:
            log.info("round %d: node %s rejected packet from %s (%s)", t, at, v.id, v.reason)
        return RoundResult(np.asarray(res.y), res.cost, res.per_link, {}, res.missing,
                           res.y_int, scale)
    return collect


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    chash = config_hash(cfg)
    master = int(cfg["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    topo = build_topology(cfg["topology"], sub_seed(master, "topology"))
    N = topo.n
    M = int(cfg["M"]) if cfg["M"] else max(2, int(round(cfg["m_ratio"] * N)))
    if not 2 <= M < N:
        print(f"need 2 <= M < N, got M={M}, N={N}", file=sys.stderr)
        return 2
    if "file" in cfg["trace"]:
        trace = load_trace(cfg["trace"]["file"])
    else:
        syn = cfg["trace"].get("synthetic", {})
        trace = synthesize_trace(N, int(cfg["rounds"]), float(syn.get("target_corr", 0.9995)),
                                 seed=sub_seed(master, "trace"), node_ids=topo.meter_ids)
    save = topo.to_dict()
    save["config_hash"] = chash
    _write_json(out / "topology.json", save)

    violations: list[str] = []
    events: dict[int, dict] = {}
    collect = None
    if cfg["mode"] == "secure":
        prof = PROFILES[cfg["profile"]]
        session = SecureSession.create(topo, M, prof["paillier_bits"], prof["signing_bits"],
                                       seed=sub_seed(master, "crypto"), scale=int(cfg["scale"]))
        attacks: dict[int, list[Attack]] = {}
        rng = np.random.default_rng(sub_seed(master, "attacks"))
        for spec in cfg["attacks"]:
            node = int(rng.choice(topo.meter_ids))
            attack, rnd = Attack.parse(spec, default_node=node)
            attacks.setdefault(1 if rnd is None else rnd, []).append(attack)
        collect = _secure_collector(session, M, int(cfg["scale"]), attacks, events, violations)
    elif cfg["attacks"]:
        print("attacks need --mode secure", file=sys.stderr)
        return 2

    bound_mode = None if cfg["bound_mode"] in (None, "none") else cfg["bound_mode"]
    rounds = stream_reconstruct(
        trace, topo, M, float(cfg["tol"]), k=cfg["k"], bound_mode=bound_mode,
        bound_samples=int(cfg["bound_samples"]), seed=sub_seed(master, "solver") % 2**32,
        collect=collect,
    )
    lo, hi = cost_bounds(N, M)
    for r in rounds:
        if not r.full and not r.skipped:
            _check(lo <= r.cost <= hi, f"round {r.t}: cost {r.cost} outside [{lo}, {hi}]", violations)
            if r.bound is not None and r.bound.feasible and bound_mode == "exact":
                _check(r.err_l2 <= r.bound.bound, f"round {r.t}: error exceeds bound", violations)

    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(CSV_FIELDS) + ["cost", "config_hash"])
        w.writeheader()
        for r in rounds:
            if r.skipped:
                continue
            w.writerow({**r.record(), "cost": r.cost, "config_hash": chash})
    with open(out / "rounds.jsonl", "w") as fh:
        for r in rounds:
            rec = {"round": r.t, "full": r.full, "skipped": r.skipped, "cost": r.cost,
                   "snr_db": None if not math.isfinite(r.snr_db) else r.snr_db,
                   "err_l2": None if math.isnan(r.err_l2) else r.err_l2,
                   "config_hash": chash}
            if r.bound is not None:
                b = r.bound
                rec["bound"] = {"value": b.bound, "feasible": b.feasible, "k": b.k,
                                "gamma_A": b.gamma_A, "gamma_A_prime": b.gamma_A_prime,
                                "delta_k": b.delta_k, "delta_k_prime": b.delta_k_prime,
                                "mode": b.estimation_mode}
            if r.t in events:
                rec["security"] = events[r.t]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    compressed = [r for r in rounds if not r.full and not r.skipped]
    snrs = [r.snr_db for r in compressed]
    summary = {
        "config": cfg,
        "config_hash": chash,
        "N": N,
        "M": M,
        "rounds": len(rounds),
        "skipped": sum(r.skipped for r in rounds),
        "min_snr_db": min(snrs) if snrs else None,
        "mean_cost": float(np.mean([r.cost for r in compressed])) if compressed else None,
        "baseline_cost": baseline_cost(N, M),
        "nonaggregation_cost": nonaggregation_cost(topo),
        "cost_bounds": [lo, hi],
        "err_slope": error_trend([r.err_l2 for r in compressed]),
        "violations": violations,
        "version": __version__,
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("N", "M", "min_snr_db", "mean_cost", "violations")}))
    return 1 if violations else 0


# -- cost-bounds ----------------------------------------------------------------


def cmd_cost_bounds(args) -> int:
    out = {}
    if args.pary:
        p, L = args.pary
        out["pary"] = {"p": p, "L": L, "N": pary_n(p, L), "cost": pary_cost(p, L, args.M)}
        N = pary_n(p, L)
    else:
        N = args.N
        if N is None:
            print("give --N or --pary", file=sys.stderr)
            return 2
    lo, hi = cost_bounds(N, args.M)
    out.update(N=N, M=args.M, min=lo, max=hi, baseline=baseline_cost(N, args.M))
    print(json.dumps(out, sort_keys=True))
    return 0


# -- analyze ------------------------------------------------------------------


def _finite(v):
    return v if v is None or math.isfinite(v) else None


def cmd_analyze(args) -> int:
    report: dict = {}
    if args.trace:
        trace = load_trace(args.trace)
        report["round_correlation"] = summarize_correlation(round_correlation(trace))
        report["increment_correlation"] = summarize_correlation(increment_correlation(trace))
        inc = increment_correlation(trace)
        inc = inc[np.isfinite(inc)]
        if inc.size:
            report["increment_correlation"]["fraction_above_0.8"] = float(np.mean(inc > 0.8))
    if args.run:
        with open(Path(args.run) / "metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        rows = [r for r in rows if r["snr_db"] not in ("inf", "")]
        snr_vals = [float(r["snr_db"]) for r in rows]
        err = [float(r["err_l2"]) for r in rows]
        report["snr_db"] = boxplot_stats(snr_vals) if snr_vals else None
        report["err_l2"] = boxplot_stats(err) if err else None
        report["cost"] = boxplot_stats([int(r["cost"]) for r in rows]) if rows else None
        report["err_slope"] = error_trend(err)
        bounds = [(float(r["err_l2"]), float(r["bound"])) for r in rows if r["bound"]]
        report["bound_pairs"] = len(bounds)
        report["bound_violations"] = sum(e > b for e, b in bounds)
    if not report:
        print("give --trace and/or --run", file=sys.stderr)
        return 2
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# -- keygen -------------------------------------------------------------------


def cmd_keygen(args) -> int:
    prof = PROFILES[args.profile]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.topology:
        ids = load_topology(args.topology).meter_ids
    else:
        ids = list(range(1, args.n + 1))
    seed = None if args.seed is None else sub_seed(args.seed, "crypto")
    kdc = paillier_keygen(prof["paillier_bits"], None if seed is None else f"{seed}/paillier")
    (out / "collector.key").write_text(dump_paillier(kdc, private=True))
    (out / "collector.pub").write_text(dump_paillier(kdc, private=False))
    directory = {}
    for i in ids:
        kp = signing_keygen(prof["signing_bits"], None if seed is None else f"{seed}/sign/{i}")
        (out / f"node_{i}.key").write_text(dump_signing(kp, private=True))
        directory[str(i)] = dump_signing(kp, private=False)
    _write_json(out / "directory.json", directory)
    print(f"wrote collector key and {len(ids)} node keys to {out}")
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="secread", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-topology", help="write topology JSON")
    kind = g.add_mutually_exclusive_group(required=True)
    kind.add_argument("--pary", nargs=2, type=int, metavar=("P", "L"))
    kind.add_argument("--random", action="store_true")
    kind.add_argument("--chain", type=int, metavar="N")
    kind.add_argument("--star", type=int, metavar="N")
    g.add_argument("--n", type=int, default=128)
    g.add_argument("--seeds", type=int, default=1)
    g.add_argument("--seed", type=int, default=0, help="first seed for --random")
    g.add_argument("--max-candidates", type=int, default=2)
    g.add_argument("--out", default="topologies")
    g.set_defaults(func=cmd_gen_topology)

    r = sub.add_parser("run", help="collect and reconstruct a stream")
    r.add_argument("--config")
    r.add_argument("--topology", choices=["random", "pary", "chain", "star", "file"])
    r.add_argument("--topology-file")
    r.add_argument("--pary", nargs=2, type=int, metavar=("P", "L"))
    r.add_argument("--n", type=int)
    r.add_argument("--M", type=int)
    r.add_argument("--m-ratio", dest="m_ratio", type=float)
    r.add_argument("--rounds", type=int)
    r.add_argument("--trace")
    r.add_argument("--corr", type=float)
    r.add_argument("--mode", choices=["plain", "secure"])
    r.add_argument("--profile", choices=sorted(PROFILES))
    r.add_argument("--scale", type=int)
    r.add_argument("--tol", type=float)
    r.add_argument("--bound-mode", dest="bound_mode", choices=["exact", "estimated", "none"])
    r.add_argument("--k", type=int)
    r.add_argument("--attack", action="append", help="e.g. replay:round=5[,node=3]")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="run")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("cost-bounds", help="cost bounds and closed forms")
    c.add_argument("--N", type=int)
    c.add_argument("--M", type=int, required=True)
    c.add_argument("--pary", nargs=2, type=int, metavar=("P", "L"))
    c.set_defaults(func=cmd_cost_bounds)

    a = sub.add_parser("analyze", help="correlations and box-plot summaries")
    a.add_argument("--trace")
    a.add_argument("--run", help="directory written by 'run'")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    k = sub.add_parser("keygen", help="collector and node keys")
    k.add_argument("--out", default="keys")
    k.add_argument("--n", type=int, default=128)
    k.add_argument("--topology")
    k.add_argument("--profile", choices=sorted(PROFILES), default="test-512")
    k.add_argument("--seed", type=int, help="deterministic keys (testing only)")
    k.set_defaults(func=cmd_keygen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
