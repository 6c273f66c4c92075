"""Command-line entry point: simulations, analysis, local deployment, codec bench.

Settings resolve as flags > ``--config`` JSON file > built-in defaults. The
global seed defaults to ``$ENTROPY_SEED`` or 0 and is always written to the
run manifest next to the CSV output.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, analysis, codec
from .codec import CodecParams

log = logging.getLogger("entropy")

SIM_CSV_HELP = (
    "CSV columns: sweep_var, sweep_value, system, seed, repair_traffic_objects, lost_fraction, "
    "lost_objects, repairs, cache_hits, cache_misses, node_failures, attacked_nodes, "
    "storage_ratio_initial, storage_ratio_final, trace_min. Traffic is in object-size units."
)


class UsageError(Exception):
    pass


# -- flag parsing helpers -----------------------------------------------------

def float_list(text: str) -> list[float]:
    """``a,b,c`` or ``lo..hi`` (step 0.01) or ``lo..hi:step``."""
    if ".." in text:
        span, _, step = text.partition(":")
        lo, hi = (float(x) for x in span.split(".."))
        step_v = float(step) if step else 0.01
        if step_v <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        n = int(round((hi - lo) / step_v))
        return [round(lo + i * step_v, 10) for i in range(n + 1)]
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def pair(text: str) -> tuple[int, int]:
    """``n,k`` for an (n, k) code."""
    vals = int_list(text)
    if len(vals) != 2 or vals[1] > vals[0] or vals[1] < 1:
        raise argparse.ArgumentTypeError(f"expected n,k with 1 <= k <= n, got {text!r}")
    return vals[0], vals[1]


def default_seed() -> int:
    raw = os.environ.get("ENTROPY_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"ENTROPY_SEED must be an integer, got {raw!r}")


# -- sim ----------------------------------------------------------------------

def _sim_config(args):
    from .sim import SimConfig

    base = SimConfig.load(args.config) if args.config else SimConfig()
    changes = {}
    scalar = {"nodes": "n_nodes", "churn_rate": "churn_per_year", "byzantine_fraction":
              "byzantine_fraction", "years": "years", "cache_ttl_hours": "cache_ttl_hours",
              "heartbeat_hours": "heartbeat_hours", "repair_latency": "repair_latency_hours"}
    for flag, field in scalar.items():
        val = getattr(args, flag, None)
        if val is not None:
            changes[field] = val
    objs = getattr(args, "objects", None)
    if objs is not None and len(objs) == 1:
        changes["objects"] = objs[0]
    churn = getattr(args, "churn", None)
    if churn is not None and len(churn) == 1:
        changes["churn_per_year"] = churn[0]
    if args.real_crypto:
        changes["real_crypto"] = True
    c = base.codec
    if args.inner:
        c = CodecParams(args.inner[1], args.inner[0], c.k_outer, c.n_chunks)
    if args.outer:
        c = CodecParams(c.k_inner, c.r_group, args.outer[1], args.outer[0])
    changes["codec"] = c
    changes["seed"] = args.seed
    return base.with_(**changes)


def _seeds(args) -> list[int]:
    return list(range(args.seed, args.seed + args.seeds))


def _systems(choice: str) -> tuple[str, ...]:
    return ("entropy", "baseline") if choice == "both" else (choice,)


def cmd_sim(args) -> int:
    from . import sim

    cfg = _sim_config(args)
    seeds = _seeds(args)
    out = Path(args.out)
    name = args.name or f"sim-{args.sim_cmd}"
    extra: dict = {}
    if args.sim_cmd == "repair-traffic":
        lists = {k: v for k, v in (("objects", args.objects), ("churn", args.churn))
                 if v is not None and len(v) > 1}
        if len(lists) > 1:
            raise UsageError("sweep either --objects or --churn, not both")
        var, values = next(iter(lists.items()), ("objects", [cfg.objects]))
        rows = sim.repair_traffic_sweep(cfg, var, values, seeds, _systems(args.system), args.workers)
        for system in _systems(args.system):
            means = sim.mean_by(rows, system)
            if len(means) > 1:
                slope, icpt, r2 = sim.linear_fit(list(means), list(means.values()))
                extra[f"fit_{system}"] = {"slope": slope, "intercept": icpt, "r2": r2}
    elif args.sim_cmd == "byzantine":
        rows = sim.byzantine_sweep(cfg, args.fractions, seeds, _systems(args.system), args.workers)
        extra["loss_onset"] = {s: sim.loss_onset(rows, s) for s in _systems(args.system)}
    elif args.sim_cmd == "targeted":
        rows = sim.targeted_sweep(cfg, args.attacked, seeds, args.strategy,
                                  _systems(args.system), args.workers)
    elif args.sim_cmd == "baseline":
        rows = sim.repair_traffic_sweep(cfg, "objects", [cfg.objects], seeds, ("baseline",))
    elif args.sim_cmd == "trace":
        traces = sim.trace_runs(cfg, seeds, args.r_groups, args.chunk)
        rows = sim.experiments.trace_rows(traces, seeds)
        extra["trace_min"] = {str(r): [min(v for _, v in t) for t in ts] for r, ts in traces.items()}
    else:  # pragma: no cover - argparse guards this
        raise UsageError(args.sim_cmd)
    csv_path = sim.write_csv(rows, out / f"{name}.csv")
    manifest = sim.write_manifest(out / f"{name}.manifest.json", " ".join(args.argv),
                                  cfg, seeds, [csv_path], extra)
    print(json.dumps({"csv": str(csv_path), "manifest": str(manifest), "rows": len(rows), **extra},
                     default=str))
    return 0


# -- analyze ------------------------------------------------------------------

def cmd_analyze(args) -> int:
    if args.an_cmd == "ctmc":
        model = analysis.GroupModel(args.N, args.F, args.n, args.k, args.lam, args.evict, args.t)
        out = {"params": asdict(model), "form": args.form,
               "analytic": analysis.absorption_probability(model, args.form)}
        if args.validate:
            p, se = analysis.mc_absorption(model, args.trials, args.seed)
            out.update(mc=p, mc_stderr=se, trials=args.trials,
                       z=(out["analytic"] - p) / se if se > 0 else 0.0)
            out["agree_3sigma"] = abs(out["analytic"] - p) <= 3 * se if se > 0 else out["analytic"] == p
    elif args.an_cmd == "attack":
        out = {"omega": args.omega, "K": args.K, "R": args.R, "phi_mu": args.phi_mu,
               "product": analysis.attack_product(args.omega, args.K, args.R),
               "bound": analysis.targeted_attack_bound(args.omega, args.K, args.R, args.phi_mu)}
    elif args.an_cmd == "bounds":
        out = {"n": args.n, "k": args.k, "hoeffding": analysis.hoeffding_bound(args.n, args.k)}
        if args.N is not None and args.F is not None:
            out["exact_tail"] = analysis.hypergeom_tail(args.N, args.F, args.n, args.k)
        if args.p_group is not None:
            out["object_loss"] = analysis.object_loss_bound(args.p_group, args.K, args.R)
    else:  # pragma: no cover
        raise UsageError(args.an_cmd)
    print(json.dumps(out, indent=2, default=str))
    return 0


# -- node ---------------------------------------------------------------------

def cmd_node(args) -> int:
    from . import deploy
    from .protocol import ObjectRecipe

    if args.node_cmd == "init":
        cfg = deploy.DeployConfig()
        if args.config:
            cfg = deploy.DeployConfig.load(args.config)
        c = cfg.codec
        if args.inner:
            c = CodecParams(args.inner[1], args.inner[0], c.k_outer, c.n_chunks)
        if args.outer:
            c = CodecParams(c.k_inner, c.r_group, args.outer[1], args.outer[0])
        changes = {"codec": c}
        if args.heartbeat is not None:
            changes["heartbeat"] = args.heartbeat
        from dataclasses import replace
        cfg = replace(cfg, **changes)
        peers = deploy.init_deployment(args.dir, args.count, args.host, args.base_port, cfg,
                                       args.key_seed)
        print(json.dumps({"dir": args.dir, "nodes": len(peers), "first": peers[0].address}))
        return 0
    if args.node_cmd == "run":
        asyncio.run(deploy.serve_node(args.dir, args.index))
        return 0

    async def client_op():
        async with deploy.Client(args.dir) as client:
            if args.node_cmd == "store":
                data = Path(args.file).read_bytes()
                recipe = await client.store(data, args.secret.encode(), args.ttl)
                recipe.save(args.recipe)
                return {"recipe": args.recipe, "object_hash": recipe.object_hash.hex(),
                        "bytes": len(data)}
            if args.node_cmd == "query":
                recipe = ObjectRecipe.load(args.recipe)
                data = await client.query(recipe, args.secret.encode())
                Path(args.out).write_bytes(data)
                return {"out": args.out, "bytes": len(data)}
            chash = bytes.fromhex(args.chunk)
            if args.node_cmd == "evict":
                target = bytes.fromhex(args.target) if args.target else None
                victim = await client.evict(chash, target)
                if victim is None:
                    raise RuntimeError("no holders found for that chunk")
                return {"evicted": victim.hex()}
            members = await client.group(chash)
            return {"members": {n.hex(): {"indices": list(e.indices), "last_claim": e.last_claim}
                                for n, e in sorted(members.items())},
                    "alive_fragments": sum(len(e.indices) for e in members.values())}

    print(json.dumps(asyncio.run(client_op())))
    return 0


# -- codec --------------------------------------------------------------------

def cmd_codec(args) -> int:
    rng = np.random.default_rng(args.seed)
    data = rng.integers(0, 256, args.size, dtype=np.uint8).tobytes()
    params = CodecParams(args.inner[1], args.inner[0], args.outer[1], args.outer[0])
    t0 = time.perf_counter()
    chunks = codec.outer_encode(data, b"bench", params)
    frags = [codec.inner_encode_many(c.data, range(params.r_group), params.k_inner) for c in chunks]
    t1 = time.perf_counter()
    picked = []
    for c, fs in zip(chunks, frags):
        sel = rng.choice(len(fs), params.k_inner, replace=False)
        dec = codec.inner_decode([fs[i] for i in sel], params.k_inner, c.chash)
        picked.append(codec.Chunk(c.object_hash, c.index, dec))
    back = codec.outer_decode(picked[: params.k_outer], params)
    t2 = time.perf_counter()
    if back != data:
        raise RuntimeError("roundtrip mismatch")
    mib = args.size / 2**20
    print(json.dumps({"bytes": args.size, "encode_s": t1 - t0, "decode_s": t2 - t1,
                      "encode_mib_s": mib / (t1 - t0), "decode_mib_s": mib / (t2 - t1)}))
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entropy", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True)

    # sim
    sp = sub.add_parser("sim", help="run simulations", epilog=SIM_CSV_HELP)
    ssub = sp.add_subparsers(dest="sim_cmd", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with SimConfig fields")
    common.add_argument("--seed", type=int, default=None, help="first seed ($ENTROPY_SEED or 0)")
    common.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    common.add_argument("--nodes", type=int)
    common.add_argument("--churn-rate", type=float, help="failures per node per year")
    common.add_argument("--byzantine-fraction", type=float)
    common.add_argument("--years", type=float)
    common.add_argument("--cache-ttl-hours", type=float)
    common.add_argument("--heartbeat-hours", type=float)
    common.add_argument("--repair-latency", type=float, help="hours per repair")
    common.add_argument("--inner", type=pair, help="inner code R,k (default 80,32)")
    common.add_argument("--outer", type=pair, help="outer code n,k (default 10,8)")
    common.add_argument("--real-crypto", action="store_true", help="use the real VRF (slow)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--name", help="output file stem")
    system = argparse.ArgumentParser(add_help=False)
    system.add_argument("--system", choices=("entropy", "baseline", "both"), default="entropy")

    rt = ssub.add_parser("repair-traffic", parents=[common, system],
                         help="repair traffic over object count or churn", epilog=SIM_CSV_HELP)
    rt.add_argument("--objects", type=int_list)
    rt.add_argument("--churn", type=float_list, help="churn values to sweep")
    tr = ssub.add_parser("trace", parents=[common], help="alive-honest fragments of one chunk")
    tr.add_argument("--objects", type=int_list)
    tr.add_argument("--r-groups", type=int_list, default=[80, 100])
    tr.add_argument("--chunk", type=int, default=0)
    bz = ssub.add_parser("byzantine", parents=[common], help="loss versus Byzantine fraction")
    bz.add_argument("--objects", type=int_list)
    bz.add_argument("--fractions", type=float_list, default=[0.0, 0.05, 0.1, 0.25, 0.33, 0.5])
    bz.add_argument("--system", choices=("entropy", "baseline", "both"), default="both")
    tg = ssub.add_parser("targeted", parents=[common], help="loss versus targeted takedowns")
    tg.add_argument("--objects", type=int_list)
    tg.add_argument("--attacked", type=float_list, default=[0.02, 0.05, 0.1, 0.15, 0.2, 0.25])
    tg.add_argument("--strategy", choices=("greedy", "random"), default="greedy")
    tg.add_argument("--system", choices=("entropy", "baseline", "both"), default="both")
    bl = ssub.add_parser("baseline", parents=[common], help="3-replica baseline run")
    bl.add_argument("--objects", type=int_list)
    sp.set_defaults(func=cmd_sim)

    # analyze
    ap = sub.add_parser("analyze", help="closed-form durability analysis")
    asub = ap.add_subparsers(dest="an_cmd", required=True)
    ct = asub.add_parser("ctmc", help="group absorption probability")
    ct.add_argument("--N", type=int, required=True)
    ct.add_argument("--F", type=int, required=True)
    ct.add_argument("--n", type=int, required=True)
    ct.add_argument("--k", type=int, required=True)
    ct.add_argument("--lambda", dest="lam", type=float, default=0.0,
                    help="churn per member per step; a per-node-per-year rate r over steps of "
                         "h hours is r*h/8760")
    ct.add_argument("--evict", type=int, default=0)
    ct.add_argument("--t", type=int, default=1)
    ct.add_argument("--form", choices=("power", "sum"), default="power")
    ct.add_argument("--validate", action="store_true", help="add a Monte Carlo cross-check")
    ct.add_argument("--trials", type=int, default=100_000)
    ct.add_argument("--seed", type=int, default=None)
    at = asub.add_parser("attack", help="targeted attack success bound")
    at.add_argument("--omega", type=int, required=True)
    at.add_argument("--K", type=int, required=True)
    at.add_argument("--R", type=int, required=True)
    at.add_argument("--phi-mu", type=int, required=True)
    bd = asub.add_parser("bounds", help="group and object loss bounds")
    bd.add_argument("--n", type=int, required=True)
    bd.add_argument("--k", type=int, required=True)
    bd.add_argument("--N", type=int)
    bd.add_argument("--F", type=int)
    bd.add_argument("--p-group", type=float)
    bd.add_argument("--K", type=int, default=8)
    bd.add_argument("--R", type=int, default=2)
    ap.set_defaults(func=cmd_analyze)

    # node
    np_ = sub.add_parser("node", help="local TCP deployment")
    nsub = np_.add_subparsers(dest="node_cmd", required=True)
    ni = nsub.add_parser("init", help="write keys, membership and config")
    ni.add_argument("--dir", required=True)
    ni.add_argument("--count", type=int, default=50)
    ni.add_argument("--host", default="127.0.0.1")
    ni.add_argument("--base-port", type=int, default=9000)
    ni.add_argument("--key-seed", type=int, help="derive keys from this seed (testing only)")
    ni.add_argument("--config", help="deploy.json to start from")
    ni.add_argument("--inner", type=pair, help="inner code R,k (default 16,8)")
    ni.add_argument("--outer", type=pair, help="outer code n,k (default 10,8)")
    ni.add_argument("--heartbeat", type=float, help="seconds")
    nr = nsub.add_parser("run", help="serve one node")
    nr.add_argument("--dir", required=True)
    nr.add_argument("--index", type=int, required=True)
    ns = nsub.add_parser("store", help="store a file, write its recipe")
    ns.add_argument("--dir", required=True)
    ns.add_argument("--file", required=True)
    ns.add_argument("--recipe", required=True)
    ns.add_argument("--secret", default="entropy")
    ns.add_argument("--ttl", type=float, default=30 * 86400.0, help="seconds")
    nq = nsub.add_parser("query", help="fetch an object from its recipe")
    nq.add_argument("--dir", required=True)
    nq.add_argument("--recipe", required=True)
    nq.add_argument("--out", required=True)
    nq.add_argument("--secret", default="entropy")
    ne = nsub.add_parser("evict", help="force a group to evict a member")
    ne.add_argument("--dir", required=True)
    ne.add_argument("--chunk", required=True, help="chunk hash, hex")
    grp = ne.add_mutually_exclusive_group()
    grp.add_argument("--oldest", action="store_true", help="evict the oldest member (default)")
    grp.add_argument("--target", help="NodeId to evict, hex")
    nv = nsub.add_parser("view", help="show a chunk group's alive members")
    nv.add_argument("--dir", required=True)
    nv.add_argument("--chunk", required=True)
    np_.set_defaults(func=cmd_node)

    # codec
    cp = sub.add_parser("codec", help="codec utilities")
    csub = cp.add_subparsers(dest="codec_cmd", required=True)
    cb = csub.add_parser("bench", help="encode/decode throughput")
    cb.add_argument("--size", type=int, default=2**20)
    cb.add_argument("--inner", type=pair, default=(80, 32))
    cb.add_argument("--outer", type=pair, default=(10, 8))
    cb.add_argument("--seed", type=int, default=None)
    cp.set_defaults(func=cmd_codec)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = default_seed()
        if getattr(args, "seeds", 1) < 1:
            raise UsageError("--seeds must be at least 1")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
