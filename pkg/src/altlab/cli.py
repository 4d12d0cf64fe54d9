"""Command-line entry point.

Subcommands: manifold, task, policy, encoder, alt, analyze, bench, figures,
run. Every subcommand accepts --config pointing at a JSON file whose keys
supply defaults for the command's flags; explicit flags win. Relative output
paths are placed under $ALTLAB_OUT when that variable is set.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


class UsageError(ValueError):
    pass


def _out_path(p) -> Path:
    root = os.environ.get("ALTLAB_OUT")
    path = Path(p)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _load_config_defaults(argv: list[str], parser: argparse.ArgumentParser):
    """Pre-scan for --config and fold the file's keys into parser defaults."""
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        try:
            cfg = json.loads(Path(cfg_path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {cfg_path}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {cfg_path} is not valid JSON: {exc}")
        known = {a.dest for a in parser._actions}
        unknown = set(cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}; "
                             f"allowed: {sorted(known - {'help', 'config'})}")
        parser.set_defaults(**cfg)


def _add_config_flag(p: argparse.ArgumentParser):
    p.add_argument("--config", type=str, default=None,
                   help="JSON file supplying defaults for this command's flags")


# ---------------------------------------------------------------------------

def cmd_manifold(argv) -> int:
    from .experiments import run_regime_cell, run_regime_suite
    from .manifolds import SHAPES, make_manifold

    parser = argparse.ArgumentParser(prog="altlab manifold")
    sub = parser.add_subparsers(dest="action", required=True)
    run_p = sub.add_parser("run", help="train and sample one regime cell")
    run_p.add_argument("--shape", choices=sorted(SHAPES), default="star")
    run_p.add_argument("--capacity", choices=["low", "high"], default="high")
    run_p.add_argument("--data", type=int, default=20)
    run_p.add_argument("--seed", type=int, default=7)
    run_p.add_argument("--steps", type=int, default=None)
    run_p.add_argument("--samples", type=int, default=500)
    run_p.add_argument("--out", type=str, required=True)
    run_p.add_argument("--svg", action="store_true")
    _add_config_flag(run_p)
    suite_p = sub.add_parser("suite", help="full 2x2 capacity/data grid")
    suite_p.add_argument("--shapes", type=str, default="star")
    suite_p.add_argument("--seed", type=int, default=7)
    suite_p.add_argument("--high-steps", type=int, default=4000)
    suite_p.add_argument("--low-steps", type=int, default=3000)
    suite_p.add_argument("--out", type=str, required=True)
    suite_p.add_argument("--no-svg", action="store_true")
    _add_config_flag(suite_p)
    for p in (run_p, suite_p):
        _load_config_defaults(argv, p)
    args = parser.parse_args(argv)

    if args.action == "run":
        from .experiments import _write_csv  # shared writer
        from .figures import regime_panel
        man = make_manifold(args.shape)
        train_pts, samples, flow, metrics, _ = run_regime_cell(
            man, args.capacity, args.data, seed=args.seed, steps=args.steps,
            num_samples=args.samples)
        out = _out_path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "train_points.csv", ["x", "y"], train_pts[:2000])
        _write_csv(out / "samples.csv", ["x", "y"], samples)
        (out / "metrics.json").write_text(json.dumps(metrics.as_dict(), indent=1))
        if args.svg:
            regime_panel(train_pts[:2000], flow[:, 0], flow, samples,
                         title=f"{args.shape} {args.capacity} n={args.data}").write(out / "panel.svg")
        print(json.dumps(metrics.as_dict(), indent=1))
    else:
        shapes = [s.strip() for s in args.shapes.split(",") if s.strip()]
        summary = run_regime_suite(_out_path(args.out), shapes=shapes, seed=args.seed,
                                   high_steps=args.high_steps, low_steps=args.low_steps,
                                   svg=not args.no_svg)
        print(json.dumps(summary, indent=1))
    return 0


def cmd_task(argv) -> int:
    from .task import (SCENARIO_KINDS, TaskConfig, generate_dataset,
                       load_dataset, make_scenario, save_dataset)

    parser = argparse.ArgumentParser(prog="altlab task")
    sub = parser.add_subparsers(dest="action", required=True)
    gen_p = sub.add_parser("gen", help="generate the demonstration dataset")
    gen_p.add_argument("--out", type=str, required=True)
    gen_p.add_argument("--seed", type=int, default=0)
    gen_p.add_argument("--rows", type=int, default=6)
    gen_p.add_argument("--cols", type=int, default=6)
    gen_p.add_argument("--horizon", type=int, default=32)
    _add_config_flag(gen_p)
    sc_p = sub.add_parser("scenario", help="render a query scenario to .npz")
    sc_p.add_argument("--dataset", type=str, required=True)
    sc_p.add_argument("--kind", choices=SCENARIO_KINDS, required=True)
    sc_p.add_argument("--level", type=int, default=None)
    sc_p.add_argument("--count", type=int, default=None)
    sc_p.add_argument("--out", type=str, required=True)
    _add_config_flag(sc_p)
    for p in (gen_p, sc_p):
        _load_config_defaults(argv, p)
    args = parser.parse_args(argv)

    if args.action == "gen":
        cfg = TaskConfig(rows=args.rows, cols=args.cols, horizon=args.horizon,
                         seed=args.seed)
        ds = generate_dataset(cfg)
        out = save_dataset(ds, _out_path(args.out))
        print(f"wrote {len(ds.demos)} demonstrations to {out}")
    else:
        ds = load_dataset(args.dataset)
        params = {}
        if args.level is not None:
            params["level"] = args.level
        if args.count is not None:
            params["count"] = args.count
        sc = make_scenario(args.kind, ds.cfg, **params)
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            out,
            hand=np.stack([q.obs.hand_image for q in sc.queries]),
            third=np.stack([q.obs.third_image for q in sc.queries]),
            pose=np.stack([q.obs.pose for q in sc.queries]),
            kinds=np.array([q.kind for q in sc.queries]),
            meta=json.dumps([q.meta for q in sc.queries]))
        print(f"wrote {len(sc.queries)} queries to {out}")
    return 0


def _scenario_obs(ds, kind, level=None, count=None):
    from .task import make_scenario
    params = {}
    if level is not None:
        params["level"] = level
    if count is not None:
        params["count"] = count
    return make_scenario(kind, ds.cfg, **params).queries


def cmd_policy(argv) -> int:
    from .nn import make_rng
    from .policy import (DiffusionPolicy, PolicyConfig, infer_action,
                         load_policy, save_policy, train_policy)
    from .task import SCENARIO_KINDS, load_dataset

    parser = argparse.ArgumentParser(prog="altlab policy")
    sub = parser.add_subparsers(dest="action", required=True)
    tr = sub.add_parser("train")
    tr.add_argument("--dataset", type=str, required=True)
    tr.add_argument("--out", type=str, required=True)
    tr.add_argument("--steps", type=int, default=5000)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--val-fraction", type=float, default=0.0)
    tr.add_argument("--report", type=str, default=None, help="write checkpoint CSV here")
    _add_config_flag(tr)
    inf = sub.add_parser("infer")
    inf.add_argument("--ckpt", type=str, required=True)
    inf.add_argument("--dataset", type=str, required=True)
    inf.add_argument("--scenario", choices=SCENARIO_KINDS, default="ind")
    inf.add_argument("--level", type=int, default=None)
    inf.add_argument("--count", type=int, default=None)
    inf.add_argument("--seed", type=int, default=0)
    inf.add_argument("--out", type=str, required=True, help="JSONL of action sequences")
    _add_config_flag(inf)
    es = sub.add_parser("earlystop")
    es.add_argument("--out", type=str, required=True)
    es.add_argument("--steps", type=int, default=3000)
    es.add_argument("--seed", type=int, default=0)
    _add_config_flag(es)
    for p in (tr, inf, es):
        _load_config_defaults(argv, p)
    args = parser.parse_args(argv)

    if args.action == "train":
        ds = load_dataset(args.dataset)
        model = DiffusionPolicy(PolicyConfig(), make_rng(args.seed))
        _, _, report = train_policy(
            ds.demos, model, steps=args.steps, rng=make_rng(args.seed + 1),
            val_fraction=args.val_fraction,
            mse_every_checkpoint=args.val_fraction > 0)
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_policy(model, out)
        if args.report:
            from .experiments import _write_csv
            _write_csv(_out_path(args.report), ["step", "val_loss", "train_action_mse"],
                       [[r["step"], r["val_loss"], r["train_action_mse"]] for r in report.rows()])
        print(f"trained {model.param_count}-parameter policy -> {out}")
    elif args.action == "infer":
        ds = load_dataset(args.dataset)
        model = load_policy(args.ckpt)
        queries = _scenario_obs(ds, args.scenario, args.level, args.count)
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            for i, q in enumerate(queries):
                seq = infer_action(model, q.obs, make_rng(args.seed * 100003 + i))
                fh.write(json.dumps({"id": i, "kind": q.kind,
                                     "actions": seq.tolist()}) + "\n")
        print(f"wrote {len(queries)} inferences to {out}")
    else:
        from .experiments import run_earlystop
        result = run_earlystop(_out_path(args.out), seed=args.seed, steps=args.steps)
        print(json.dumps(result, indent=1))
    return 0


def cmd_encoder(argv) -> int:
    from .encoder import (AugmentationConfig, AugmentationPipeline,
                          EncoderConfig, FusionEncoder, save_encoder,
                          train_encoder)
    from .nn import make_rng
    from .task import load_dataset

    parser = argparse.ArgumentParser(prog="altlab encoder")
    sub = parser.add_subparsers(dest="action", required=True)
    tr = sub.add_parser("train")
    tr.add_argument("--dataset", type=str, required=True)
    tr.add_argument("--out", type=str, required=True)
    tr.add_argument("--steps", type=int, default=1200)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--embed-dim", type=int, default=64)
    tr.add_argument("--temperature", type=float, default=0.4)
    tr.add_argument("--no-pose", action="store_true",
                    help="exclude the pose modality from the fused embedding")
    _add_config_flag(tr)
    _load_config_defaults(argv, tr)
    args = parser.parse_args(argv)

    ds = load_dataset(args.dataset)
    enc = FusionEncoder(EncoderConfig(embed_dim=args.embed_dim,
                                      temperature=args.temperature,
                                      include_pose=not args.no_pose),
                        make_rng(args.seed))
    aug = AugmentationPipeline(AugmentationConfig())
    train_encoder(ds, enc, aug, aug, steps=args.steps, rng=make_rng(args.seed + 1))
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_encoder(enc, out, AugmentationConfig())
    print(f"trained {enc.param_count}-parameter encoder -> {out}")
    return 0


def cmd_alt(argv) -> int:
    from .encoder import load_encoder
    from .engine import (build_bank, build_kdtree, kdtree_query, load_bank,
                         query, rollout, save_bank)
    from .task import SCENARIO_KINDS, load_dataset

    parser = argparse.ArgumentParser(prog="altlab alt")
    sub = parser.add_subparsers(dest="action", required=True)
    b = sub.add_parser("build")
    b.add_argument("--dataset", type=str, required=True)
    b.add_argument("--encoder", type=str, required=True)
    b.add_argument("--gamma", type=float, default=0.9)
    b.add_argument("--out", type=str, required=True)
    _add_config_flag(b)
    q = sub.add_parser("query")
    q.add_argument("--bank", type=str, required=True)
    q.add_argument("--encoder", type=str, required=True)
    q.add_argument("--dataset", type=str, required=True)
    q.add_argument("--scenario", choices=SCENARIO_KINDS, default="ind")
    q.add_argument("--level", type=int, default=None)
    q.add_argument("--count", type=int, default=None)
    q.add_argument("--out", type=str, default=None, help="JSONL decision log")
    _add_config_flag(q)
    r = sub.add_parser("rollout")
    r.add_argument("--bank", type=str, required=True)
    r.add_argument("--encoder", type=str, required=True)
    r.add_argument("--dataset", type=str, required=True)
    r.add_argument("--scenario", choices=SCENARIO_KINDS, default="ood-interpolate")
    r.add_argument("--level", type=int, default=None)
    r.add_argument("--cadence", type=int, default=1)
    r.add_argument("--out", type=str, required=True, help="JSONL decision/action log")
    _add_config_flag(r)
    k = sub.add_parser("baseline-kdtree")
    k.add_argument("--dataset", type=str, required=True)
    k.add_argument("--scenario", choices=SCENARIO_KINDS, default="ind")
    k.add_argument("--level", type=int, default=None)
    k.add_argument("--leaf-size", type=int, default=16)
    k.add_argument("--out", type=str, default=None)
    _add_config_flag(k)
    for p in (b, q, r, k):
        _load_config_defaults(argv, p)
    args = parser.parse_args(argv)

    ds = load_dataset(args.dataset)
    if args.action == "build":
        enc = load_encoder(args.encoder)
        bank = build_bank(ds, enc, gamma=args.gamma)
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_bank(bank, out)
        size = os.path.getsize(out)
        print(f"bank: {len(bank)} entries, gamma={bank.gamma}, {size} bytes -> {out}")
    elif args.action == "query":
        enc = load_encoder(args.encoder)
        bank = load_bank(args.bank)
        queries = _scenario_obs(ds, args.scenario, args.level, args.count)
        rows = []
        for i, qq in enumerate(queries):
            res = query(bank, enc, qq.obs)
            rows.append({"query": i, "kind": qq.kind, "decision": res.decision,
                         "traj_id": res.traj_id, "frame_idx": res.frame_idx,
                         "similarity": res.similarity, "latency_s": res.latency_s})
        text = "\n".join(json.dumps(r) for r in rows)
        if args.out:
            out = _out_path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text + "\n")
        print(text)
    elif args.action == "rollout":
        enc = load_encoder(args.encoder)
        bank = load_bank(args.bank)
        queries = [qq.obs for qq in _scenario_obs(ds, args.scenario, args.level)]
        log = rollout(bank, enc, queries, ds, cadence=args.cadence)
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            for i, step in enumerate(log.steps):
                row = {"step": i, "fallback": step.fallback,
                       "action": step.action.tolist()}
                if step.result is not None:
                    row.update({"decision": step.result.decision,
                                "traj_id": step.result.traj_id,
                                "frame_idx": step.result.frame_idx,
                                "similarity": step.result.similarity})
                fh.write(json.dumps(row) + "\n")
        n_ood = sum(1 for s in log.steps if s.fallback)
        print(f"rollout: {len(log.steps)} steps, {n_ood} fallback steps -> {out}")
    else:
        index = build_kdtree(ds, leaf_size=args.leaf_size)
        queries = _scenario_obs(ds, args.scenario, args.level)
        rows = []
        for i, qq in enumerate(queries):
            tid, fid, dist, lat = kdtree_query(index, qq.obs)
            rows.append({"query": i, "kind": qq.kind, "traj_id": tid,
                         "frame_idx": fid, "distance": dist, "latency_s": lat})
        text = "\n".join(json.dumps(r) for r in rows)
        if args.out:
            out = _out_path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(text + "\n")
        print(text)
    return 0


def cmd_analyze(argv) -> int:
    from .experiments import _write_csv
    from .figures import bars_line_svg
    from .similarity import batch_report, positions_of
    from .task import load_dataset

    parser = argparse.ArgumentParser(prog="altlab analyze")
    sub = parser.add_subparsers(dest="action", required=True)
    sim = sub.add_parser("similarity")
    sim.add_argument("--queries", type=str, required=True,
                     help="JSONL rows with an 'actions' field (T x >=3)")
    sim.add_argument("--train", type=str, required=True, help="dataset directory")
    sim.add_argument("--out", type=str, required=True)
    sim.add_argument("--svg", action="store_true")
    _add_config_flag(sim)
    _load_config_defaults(argv, sim)
    args = parser.parse_args(argv)

    ds = load_dataset(args.train)
    queries = []
    with open(args.queries) as fh:
        for line in fh:
            if line.strip():
                queries.append(positions_of(np.array(json.loads(line)["actions"])))
    train = [positions_of(d.actions) for d in ds.demos]
    ids = [d.traj_id for d in ds.demos]
    rep = batch_report(queries, train, train_ids=ids)
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "similarity.csv",
               ["query", "nearest_id", "second_id", "s1", "s2", "score"],
               [[r.query_id, r.nearest_id, r.second_id, r.s1, r.s2, r.score]
                for r in rep.reports])
    (out / "summary.json").write_text(json.dumps(rep.summary(), indent=1))
    if args.svg:
        for r in rep.reports[:8]:
            (out / f"query_{r.query_id:03d}.svg").write_text(
                bars_line_svg(r.per_trajectory, line=[r.s1, r.s2],
                              title=f"query {r.query_id}"))
    print(json.dumps(rep.summary(), indent=1))
    return 0


def cmd_bench(argv) -> int:
    from .encoder import load_encoder
    from .engine import load_bank
    from .experiments import run_bench
    from .policy import load_policy
    from .task import load_dataset

    parser = argparse.ArgumentParser(prog="altlab bench")
    sub = parser.add_subparsers(dest="action", required=True)
    cmp_p = sub.add_parser("compare")
    cmp_p.add_argument("--dataset", type=str, required=True)
    cmp_p.add_argument("--policy", type=str, required=True)
    cmp_p.add_argument("--encoder", type=str, required=True)
    cmp_p.add_argument("--bank", type=str, required=True)
    cmp_p.add_argument("--repeats", type=int, default=100)
    cmp_p.add_argument("--warmup", type=int, default=5)
    cmp_p.add_argument("--out", type=str, required=True)
    _add_config_flag(cmp_p)
    _load_config_defaults(argv, cmp_p)
    args = parser.parse_args(argv)

    ds = load_dataset(args.dataset)
    model = load_policy(args.policy)
    enc = load_encoder(args.encoder)
    bank = load_bank(args.bank)
    dataset_files = [p for p in Path(args.dataset).iterdir() if p.is_file()]
    paths = {
        "alt": [args.encoder, args.encoder + ".json", args.bank],
        "diffusion": [args.policy],
        "kdtree": dataset_files,
    }
    result = run_bench(_out_path(args.out), ds, model, enc, bank, paths,
                       repeats=args.repeats, warmup=args.warmup)
    print(json.dumps(result, indent=1))
    return 0


def cmd_figures(argv) -> int:
    from .figures import regime_panel

    parser = argparse.ArgumentParser(prog="altlab figures")
    parser.add_argument("--from", dest="src", type=str, required=True,
                        help="experiment output directory holding CSV data")
    parser.add_argument("--out", type=str, required=True)
    _add_config_flag(parser)
    _load_config_defaults(argv, parser)
    args = parser.parse_args(argv)

    src = Path(args.src)
    out = _out_path(args.out)
    made = 0
    for samples_csv in sorted(src.rglob("samples.csv")):
        cell = samples_csv.parent
        train_csv = cell / "train_points.csv"
        if not train_csv.exists():
            continue
        samples = np.loadtxt(samples_csv, delimiter=",", skiprows=1)
        train = np.loadtxt(train_csv, delimiter=",", skiprows=1)
        panel = regime_panel(train, None, None, samples, title=cell.name)
        rel = cell.relative_to(src)
        panel.write(out / rel / "panel.svg")
        made += 1
    if made == 0:
        print("warning: no plottable CSV data found; nothing emitted")
    else:
        print(f"wrote {made} panels under {out}")
    return 0


def cmd_run(argv) -> int:
    from .experiments import run_experiment

    parser = argparse.ArgumentParser(prog="altlab run")
    parser.add_argument("--config", type=str, required=True)
    parser.add_argument("--out", type=str, required=True)
    args = parser.parse_args(argv)
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {args.config} is not valid JSON: {exc}")
    result = run_experiment(cfg, _out_path(args.out))
    print(json.dumps(result, indent=1, default=str))
    return 0


COMMANDS = {
    "manifold": cmd_manifold,
    "task": cmd_task,
    "policy": cmd_policy,
    "encoder": cmd_encoder,
    "alt": cmd_alt,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
    "figures": cmd_figures,
    "run": cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = argparse.ArgumentParser(
        prog="altlab",
        description="Desk-scale study of action memorization in denoising "
                    "policies, with an explicit lookup-table policy, OOD "
                    "detection, and baselines.")
    parser.add_argument("command", choices=sorted(COMMANDS),
                        help="subcommand; run `altlab <command> --help` for flags")
    parser.add_argument("args", nargs=argparse.REMAINDER)
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return COMMANDS[ns.command](ns.args)
    except SystemExit as exc:  # nested parser --help or usage error
        return 0 if exc.code == 0 else 1
    except (UsageError,) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
