"""Command-line harness.

Subcommands: generate, train, solve, eval, ablate, scale, memstats,
gradcheck. Exit codes: 0 success, 2 usage errors (argparse), 3 missing or
malformed files, 4 oracle search-space cap exceeded, 1 other failures.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench
from .baselines import SearchSpaceError, brute_force_optimal
from .config import EncoderConfig, PolicyConfig, TrainConfig
from .instance import (
    SCENARIOS,
    ProblemInstance,
    ScenarioSpec,
    SchemaError,
    generate_instance,
    load_instance,
    save_instance,
    save_solution,
    solution_to_dict,
)
from .model import Policy
from .trainer import DecodeMode, evaluate_policy, train

GRADCHECK_TOLERANCE = 1e-4


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="Small",
                   help=f"named scenario ({', '.join(SCENARIOS)}) or 'custom'")
    p.add_argument("--n", type=int, help="custom: node count")
    p.add_argument("--periods", type=int, help="custom: period count")
    p.add_argument("--medians", type=str, help="custom: comma list of p choices, e.g. 2,3")
    p.add_argument("--service-radius", type=float, default=None)


def _scenario_from_args(args) -> ScenarioSpec:
    if args.scenario != "custom":
        if args.scenario not in SCENARIOS:
            raise SchemaError(f"unknown scenario {args.scenario!r}; known: {sorted(SCENARIOS)}")
        return SCENARIOS[args.scenario]
    if args.n is None or args.periods is None or not args.medians:
        raise SchemaError("custom scenario needs --n, --periods, and --medians")
    medians = tuple(int(x) for x in args.medians.split(","))
    return ScenarioSpec(
        f"custom-n{args.n}-t{args.periods}", args.n, args.periods, medians,
        service_radius=args.service_radius,
    )


def _add_policy_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-h", type=int, default=128)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--ffn-hidden", type=int, default=None)
    p.add_argument("--phi-hidden", type=int, default=16)
    p.add_argument("--slots", type=int, default=32)
    p.add_argument("--ctx-dim", type=int, default=16)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--learn-beta", action="store_true")
    p.add_argument("--no-distance-bias", action="store_true")
    p.add_argument("--dense", action="store_true", help="disable K-NN sparsification")
    p.add_argument("--no-memory", action="store_true")


def _policy_config_from_args(args, n_periods: int) -> PolicyConfig:
    return PolicyConfig(
        n_periods=n_periods,
        encoder=EncoderConfig(
            d_h=args.d_h,
            n_heads=args.heads,
            n_layers=args.layers,
            k_neighbors=args.k,
            ffn_hidden=args.ffn_hidden,
            phi_hidden=args.phi_hidden,
        ),
        mem_slots=args.slots,
        ctx_dim=args.ctx_dim,
        beta=args.beta,
        learn_beta=args.learn_beta,
        use_distance_bias=not args.no_distance_bias,
        knn_sparse=not args.dense,
        use_memory=not args.no_memory,
    )


def _load_corpus(corpus_dir: Path) -> tuple[list[ProblemInstance], dict[str, float]]:
    inst_dir = corpus_dir / "instances"
    if not inst_dir.is_dir():
        raise SchemaError(f"no instances/ directory under {corpus_dir}")
    instances = [load_instance(p) for p in sorted(inst_dir.glob("*.json"))]
    references: dict[str, float] = {}
    sol_dir = corpus_dir / "solutions"
    if sol_dir.is_dir():
        from .instance import load_solution

        for p in sorted(sol_dir.glob("*.json")):
            sol = load_solution(p)
            if sol.solver == "oracle":
                references[sol.instance_id] = sol.cost
    return instances, references


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    scenario = _scenario_from_args(args)
    out = Path(args.out)
    manifest = bench.RunManifest(
        command=sys.argv,
        config={"scenario": scenario.name, "count": args.count, "seed": args.seed,
                "with_oracle": args.with_oracle},
        seeds={"corpus_base": args.seed},
    )
    inst_dir = out / "instances"
    inst_dir.mkdir(parents=True, exist_ok=True)
    sol_dir = out / "solutions"
    written = []
    for i in range(args.count):
        inst = generate_instance(scenario, seed=args.seed + i)
        path = inst_dir / f"{inst.id}.json"
        save_instance(inst, path)
        written.append(str(path))
        if args.with_oracle:
            sol = brute_force_optimal(inst, max_combinations_per_period=args.oracle_cap)
            sol_dir.mkdir(parents=True, exist_ok=True)
            spath = sol_dir / f"{inst.id}.oracle.json"
            save_solution(sol, spath)
            written.append(str(spath))
    manifest.artifacts = written
    mpath = manifest.write(out)
    print(f"wrote {args.count} instances under {out} (manifest {mpath.name})")
    return 0


def cmd_train(args) -> int:
    scenario = _scenario_from_args(args)
    policy_config = _policy_config_from_args(args, scenario.n_periods)
    train_config = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        lambda_orth=args.lambda_orth,
        lambda_ent=args.lambda_ent,
        validation_size=args.validation_size,
        seed=args.seed,
        flip_entropy_sign=args.flip_entropy_sign,
    )
    out = Path(args.out)
    manifest = bench.RunManifest(
        command=sys.argv,
        config={
            "scenario": scenario.name,
            "policy": json.loads(json.dumps(policy_config, default=lambda o: o.__dict__)),
            "train": train_config.__dict__,
        },
        seeds={"train_seed": args.seed},
    )
    manifest.artifacts = [str(out / "ckpt_best.json"), str(out / "train_log.jsonl")]
    manifest.write(out)
    state = train(train_config, scenario, policy_config, out_dir=out, quiet=args.quiet)
    print(
        f"trained {state.epoch} epochs, best validation cost "
        f"{state.best_validation_cost:.4f}; checkpoints under {out}"
    )
    return 0


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    if args.solver == "policy":
        if not args.checkpoint:
            raise SchemaError("--solver policy needs --checkpoint")
        policy = Policy.load(args.checkpoint)
        rng = np.random.default_rng(args.seed)
        t0 = time.perf_counter()
        result = policy.solve(
            inst, mode=args.mode, samples=args.samples, rng=rng,
            capture_trace=bool(args.trace),
        )
        elapsed = time.perf_counter() - t0
        solution = result.solution
        solution.runtime_s = elapsed
        if args.trace:
            trace = [
                {
                    "period": s.period, "step": s.step, "chosen": s.chosen,
                    "log_prob": s.log_prob,
                    "alpha": None if s.alpha is None else s.alpha.tolist(),
                }
                for s in result.trajectory.steps
            ]
            Path(args.trace).write_text(json.dumps(trace))
    else:
        solution, elapsed = bench.solve_classical(args.solver, inst, seed=args.seed)
        solution.runtime_s = elapsed
    if args.out:
        save_solution(solution, args.out)
    print(json.dumps(solution_to_dict(solution)))
    return 0


def cmd_eval(args) -> int:
    corpus_dir = Path(args.corpus)
    instances, references = _load_corpus(corpus_dir)
    if not instances:
        raise SchemaError(f"no instances found under {corpus_dir}")
    solvers = [s for s in args.solvers.split(",") if s]
    modes = [DecodeMode.parse(m) for m in args.modes.split(",") if m]
    out = Path(args.out)
    manifest = bench.RunManifest(
        command=sys.argv,
        config={"corpus": str(corpus_dir), "solvers": solvers,
                "modes": [m.label for m in modes], "seed": args.seed},
        seeds={"eval_seed": args.seed},
    )
    mpath = manifest.write(out)

    rows: list[dict] = []
    classical = [s for s in solvers if s != "policy"]
    if classical:
        rows.extend(bench.classical_rows(classical, instances, references, seed=args.seed))
    if "policy" in solvers:
        if not args.checkpoint:
            raise SchemaError("eval with the policy solver needs --checkpoint")
        policy = Policy.load(args.checkpoint)
        rng = np.random.default_rng(args.seed)
        rows.extend(evaluate_policy(policy, instances, references, modes, rng))

    detail_path = bench.write_csv(
        out / "results.csv",
        ("instance_id", "algorithm", "obj", "ref", "gap_pct", "time_s"),
        [
            [r["instance_id"], r["algorithm"], f"{r['obj']:.6f}",
             "" if r["ref"] is None else f"{r['ref']:.6f}",
             "" if r["gap_pct"] is None else f"{r['gap_pct']:.4f}", f"{r['time_s']:.6f}"]
            for r in rows
        ],
        mpath,
    )
    table = bench.gap_table(rows)
    table_path = bench.write_csv(
        out / "gap_table.csv",
        bench.GAP_TABLE_COLUMNS,
        [[a, f"{o:.4f}", f"{g:.4f}", f"{t:.6f}", k] for a, o, g, t, k in table],
        mpath,
    )
    print(f"wrote {detail_path} and {table_path}")
    for row in table:
        print(f"  {row[0]:<24} obj {row[1]:.4f}  gap {row[2]:.2f}%  time {row[3]:.4f}s")
    return 0


def cmd_ablate(args) -> int:
    scenario = _scenario_from_args(args)
    base = _policy_config_from_args(args, scenario.n_periods)
    references = {}
    if args.with_oracle:
        for i in range(args.count):
            inst = generate_instance(scenario, seed=args.seed + i)
            references[inst.id] = brute_force_optimal(inst).cost
    rows = bench.ablation_table(
        base, scenario, n_instances=args.count, seed=args.seed, references=references
    )
    out = Path(args.out)
    manifest = bench.RunManifest(
        command=sys.argv,
        config={"scenario": scenario.name, "count": args.count, "seed": args.seed},
        seeds={"seed": args.seed},
    )
    mpath = manifest.write(out)
    path = bench.write_csv(
        out / "ablation.csv",
        ("Configuration", "Obj.", "Gap(%)", "Time(s)", "lambda_reg"),
        [
            [label, f"{obj:.4f}", "" if gap is None else f"{gap:.4f}", f"{t:.6f}", lam]
            for label, obj, gap, t, lam in rows
        ],
        mpath,
    )
    print(f"wrote {path}")
    for label, obj, gap, t, lam in rows:
        gtxt = "-" if gap is None else f"{gap:.2f}%"
        print(f"  {label:<26} obj {obj:.4f}  gap {gtxt}  time {t:.4f}s")
    return 0


def cmd_scale(args) -> int:
    sizes = [int(x) for x in args.n.split(",")]
    result = bench.scaling_sweep(
        sizes, k=args.k, repeats=args.repeats, seed=args.seed,
        d_h=args.d_h, n_layers=args.layers, n_heads=args.heads,
    )
    out = Path(args.out)
    manifest = bench.RunManifest(
        command=sys.argv,
        config={"sizes": sizes, "k": args.k, "repeats": args.repeats, "seed": args.seed},
        seeds={"seed": args.seed},
    )
    mpath = manifest.write(out)
    path = bench.write_csv(
        out / "scaling.csv",
        ("n", "seconds"),
        [[n, f"{t:.6f}"] for n, t in zip(result["sizes"], result["seconds"])],
        mpath,
    )
    # gnuplot-friendly copy: whitespace-separated with a comment header
    dat = out / "scaling.dat"
    with dat.open("w") as fh:
        fh.write(f"# fitted exponent: {result['exponent']:.4f}\n# n seconds\n")
        for n, t in zip(result["sizes"], result["seconds"]):
            fh.write(f"{n} {t:.6f}\n")
    print(f"wrote {path} and {dat}")
    print(f"fitted power-law exponent: {result['exponent']:.3f}")
    return 0


def cmd_memstats(args) -> int:
    scenario = _scenario_from_args(args)
    if args.checkpoint:
        policy = Policy.load(args.checkpoint)
    else:
        config = _policy_config_from_args(args, scenario.n_periods)
        policy = Policy.init(config, seed=args.seed, randomize_gates=True)
    instances = [generate_instance(scenario, seed=args.seed + i) for i in range(args.count)]
    stats = bench.memstats(policy, instances)
    print(json.dumps(stats, indent=1))
    return 0


def cmd_gradcheck(args) -> int:
    report = bench.gradcheck_report(seed=args.seed, include_composed=not args.skip_composed)
    worst = 0.0
    for name in sorted(report):
        err = report[name]
        worst = max(worst, err)
        status = "ok" if err <= GRADCHECK_TOLERANCE else "FAIL"
        print(f"{status:>4}  {name:<24} max rel err {err:.3e}")
    print(f"worst: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return 0 if worst <= GRADCHECK_TOLERANCE else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpmedian",
        description="multi-period p-median solvers and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded instance corpus")
    _add_scenario_args(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--with-oracle", action="store_true",
                   help="also solve each instance exactly (refuses above the cap)")
    p.add_argument("--oracle-cap", type=int, default=2_000_000)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train the constructive policy")
    _add_scenario_args(p)
    _add_policy_args(p)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--steps-per-epoch", type=int, default=250)
    p.add_argument("--lambda-orth", type=float, default=1e-3)
    p.add_argument("--lambda-ent", type=float, default=1e-3)
    p.add_argument("--flip-entropy-sign", action="store_true")
    p.add_argument("--validation-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("solve", help="solve one instance file")
    p.add_argument("--instance", required=True)
    p.add_argument("--solver", default="policy",
                   choices=["policy", "oracle", "teitz-bart", "sa", "random"])
    p.add_argument("--checkpoint", help="checkpoint base path (policy solver)")
    p.add_argument("--mode", default="greedy", choices=["greedy", "sample"])
    p.add_argument("--samples", type=int, default=1, help="best-of-S sampling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the solution JSON here")
    p.add_argument("--trace", help="write the per-step decode trace here")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("eval", help="gap/runtime table over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--solvers", default="policy",
                   help="comma list from policy,oracle,teitz-bart,sa,random")
    p.add_argument("--modes", default="greedy",
                   help="policy decode modes, e.g. greedy,sample128,sample1280")
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="progressive feature-toggle table")
    _add_scenario_args(p)
    _add_policy_args(p)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-oracle", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("scale", help="inference timing sweep with power-law fit")
    p.add_argument("--n", default="100,200,400,800", help="comma list of node counts")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--d-h", type=int, default=128)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_scale)

    p = sub.add_parser("memstats", help="memory slot similarity and utilization")
    _add_scenario_args(p)
    _add_policy_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_memstats)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-composed", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SearchSpaceError as exc:
        print(f"error (search space): {exc}", file=sys.stderr)
        return 4
    except (FileNotFoundError, SchemaError) as exc:
        print(f"error (input): {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
