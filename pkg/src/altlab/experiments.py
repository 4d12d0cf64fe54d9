"""Experiment orchestration: the regime suite, the memorization suite, the
early-stopping run, and the method comparison bench.

Every suite writes CSV/JSON artifacts under its output directory plus a
manifest recording the exact configuration and its hash. Rerunning a config
reproduces all non-timing outputs byte-for-byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_compare
from .diffusion import (denoiser_net, denoise_sample, geometric_schedule,
                        regime_metrics, train_denoiser)
from .encoder import (AugmentationConfig, AugmentationPipeline, EncoderConfig,
                      FusionEncoder, save_encoder, train_encoder)
from .engine import (build_bank, build_kdtree, kdtree_query, query, save_bank)
from .figures import bars_line_svg, regime_panel
from .manifolds import make_manifold
from .nn import make_rng, spawn_rngs
from .policy import (DiffusionPolicy, PolicyConfig, infer_action, save_policy,
                     train_policy)
from .similarity import batch_report, positions_of
from .task import TaskConfig, generate_dataset, make_scenario, save_dataset

REGIME_CELLS = (("low", 20), ("low", 100000), ("high", 20), ("high", 100000))

SCENARIO_SET = (
    ("ind", {}),
    ("ind-interpolate", {"anchor": (0, 0)}),
    ("ood-interpolate", {}),
    ("ood-extrapolate", {}),
    ("ood-distractor", {"level": 1}),
    ("ood-distractor", {"level": 2}),
    ("ood-distractor", {"level": 3}),
    ("ood-distractor", {"level": 4}),
    ("ood-unrelated", {"count": 5}),
)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _write_manifest(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(
        {"tool_version": __version__, "config": cfg, "config_hash": config_hash(cfg)},
        sort_keys=True, indent=1))


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# regime suite (four generalization regimes per manifold)

def run_regime_cell(manifold, capacity: str, data_size: int, seed: int,
                    steps: int | None = None, num_samples: int = 500):
    """Train one (capacity, data size) cell and sample it. Returns
    (train_points, samples, flow, metrics, loss_trace)."""
    sched = geometric_schedule(100)
    r_data, r_net, r_train, r_sample = spawn_rngs(seed, 4)
    train_pts = manifold.sample(data_size, r_data)
    net = denoiser_net(capacity, r_net)
    if steps is None:
        steps = 4000 if capacity == "high" else 3000
    trace = train_denoiser(train_pts, net, sched, steps, r_train)
    samples, flow = denoise_sample(net, sched, num_samples, r_sample)
    metric_train = train_pts if data_size <= 2000 else train_pts[:2000]
    metrics = regime_metrics(samples, metric_train, manifold)
    return train_pts, samples, flow, metrics, trace


def run_regime_suite(out_dir, shapes=("star",), seed: int = 7,
                     high_steps: int = 4000, low_steps: int = 3000,
                     num_samples: int = 500, svg: bool = True) -> dict:
    out = Path(out_dir)
    cfg = {"experiment": "regimes", "shapes": list(shapes), "seed": seed,
           "high_steps": high_steps, "low_steps": low_steps, "num_samples": num_samples}
    _write_manifest(out, cfg)
    summary: dict = {}
    for shape in shapes:
        manifold = make_manifold(shape)
        shape_summary = {}
        for capacity, size in REGIME_CELLS:
            cell = f"{capacity}_{size}"
            cell_dir = out / shape / cell
            steps = high_steps if capacity == "high" else low_steps
            train_pts, samples, flow, metrics, trace = run_regime_cell(
                manifold, capacity, size, seed=seed, steps=steps, num_samples=num_samples)
            _write_csv(cell_dir / "train_points.csv", ["x", "y"], train_pts[:2000])
            _write_csv(cell_dir / "samples.csv", ["x", "y"], samples)
            flat_rows = [[i, j, *flow[i, j]] for i in range(0, len(flow), max(1, len(flow) // 100))
                         for j in range(flow.shape[1])]
            _write_csv(cell_dir / "flows.csv", ["sample", "step", "x", "y"], flat_rows)
            _write_csv(cell_dir / "loss.csv", ["step", "loss"],
                       list(enumerate(trace)))
            (cell_dir / "metrics.json").write_text(json.dumps(metrics.as_dict(), indent=1))
            if svg:
                panel = regime_panel(train_pts[:2000], flow[:, 0], flow, samples,
                                     title=f"{shape}: {capacity} capacity, n={size}")
                panel.write(cell_dir / "panel.svg")
            shape_summary[cell] = metrics.as_dict()
        summary[shape] = shape_summary
        (out / shape / "summary.json").write_text(json.dumps(shape_summary, indent=1))
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


# ---------------------------------------------------------------------------
# memorization suite (policy + encoder + bank + scenarios)

def scenario_queries(task_cfg: TaskConfig):
    """The canonical scenario battery used by the analysis suites."""
    battery = []
    for kind, params in SCENARIO_SET:
        sc = make_scenario(kind, task_cfg, **params)
        name = kind if "level" not in params else f"{kind}-l{params['level']}"
        battery.append((name, sc))
    return battery


def run_memorization_suite(out_dir, seed: int = 0, policy_steps: int = 3000,
                           encoder_steps: int = 1200, gamma: float = 0.9,
                           infer_repeats: int = 3, svg: bool = True) -> dict:
    out = Path(out_dir)
    cfg = {"experiment": "memorization", "seed": seed, "policy_steps": policy_steps,
           "encoder_steps": encoder_steps, "gamma": gamma, "infer_repeats": infer_repeats}
    _write_manifest(out, cfg)
    r_policy, r_train, r_enc, r_enctrain, r_infer = spawn_rngs(seed, 5)

    task_cfg = TaskConfig(seed=seed)
    dataset = generate_dataset(task_cfg)
    save_dataset(dataset, out / "dataset")

    model = DiffusionPolicy(PolicyConfig(), r_policy)
    _, _, report = train_policy(dataset.demos, model, steps=policy_steps, rng=r_train)
    save_policy(model, out / "policy.ckpt")
    _write_csv(out / "policy_train.csv", ["step", "val_loss", "train_action_mse"],
               [[r["step"], r["val_loss"], r["train_action_mse"]] for r in report.rows()])

    enc = FusionEncoder(EncoderConfig(), r_enc)
    aug = AugmentationPipeline(AugmentationConfig())
    train_encoder(dataset, enc, aug, aug, steps=encoder_steps, rng=r_enctrain)
    save_encoder(enc, out / "encoder.ckpt", AugmentationConfig())
    bank = build_bank(dataset, enc, gamma=gamma)
    save_bank(bank, out / "bank.alt")

    train_actions = [positions_of(d.actions) for d in dataset.demos]
    train_ids = [d.traj_id for d in dataset.demos]
    summary: dict = {"scenarios": {}}
    sc_dir = out / "scenarios"
    for name, sc in scenario_queries(task_cfg):
        rows = []
        seqs = []
        decisions = []
        for qi, q in enumerate(sc.queries):
            for rep in range(infer_repeats if name.startswith("ood") else 1):
                rng = make_rng(seed * 1_000_003 + hash((name, qi, rep)) % 1_000_000)
                seqs.append(positions_of(infer_action(model, q.obs, rng)))
            res = query(bank, enc, q.obs)
            decisions.append({"query": qi, "kind": q.kind, "decision": res.decision,
                              "traj_id": res.traj_id, "frame_idx": res.frame_idx,
                              "similarity": res.similarity})
        rep_batch = batch_report(seqs, train_actions, train_ids=train_ids)
        for r in rep_batch.reports:
            rows.append([r.query_id, r.nearest_id, r.second_id, r.s1, r.s2, r.score])
        _write_csv(sc_dir / f"{name}_similarity.csv",
                   ["query", "nearest_id", "second_id", "s1", "s2", "score"], rows)
        with open(sc_dir / f"{name}_decisions.jsonl", "w") as fh:
            for d in decisions:
                fh.write(json.dumps(d, sort_keys=True) + "\n")
        if svg and rep_batch.reports:
            first = rep_batch.reports[0]
            svg_text = bars_line_svg(first.per_trajectory,
                                     line=[first.s1, first.s2],
                                     title=f"{name}: query 0 similarity per trajectory")
            (sc_dir / f"{name}.svg").write_text(svg_text)
        summary["scenarios"][name] = {
            "report": rep_batch.summary(),
            "bank_decisions": [d["decision"] for d in decisions],
            "bank_similarities": [d["similarity"] for d in decisions],
        }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    return summary


def run_earlystop(out_dir, seed: int = 0, steps: int = 3000,
                  val_fraction: float = 1 / 3) -> dict:
    """Validation-split training run: records where validation loss bottoms
    out versus how far the training-action error still is from converged."""
    out = Path(out_dir)
    cfg = {"experiment": "earlystop", "seed": seed, "steps": steps,
           "val_fraction": val_fraction}
    _write_manifest(out, cfg)
    r_policy, r_train = spawn_rngs(seed + 17, 2)
    dataset = generate_dataset(TaskConfig(seed=seed))
    model = DiffusionPolicy(PolicyConfig(), r_policy)
    _, _, report = train_policy(dataset.demos, model, steps=steps, rng=r_train,
                                val_fraction=val_fraction)
    _write_csv(out / "earlystop.csv", ["step", "val_loss", "train_action_mse"],
               [[r["step"], r["val_loss"], r["train_action_mse"]] for r in report.rows()])
    best = report.best_val_index()
    result = {
        "checkpoints": len(report.checkpoint_steps),
        "best_val_checkpoint": best + 1,
        "best_val_step": report.checkpoint_steps[best],
        "best_val_loss": report.val_losses[best],
        "mse_at_best_val": report.train_action_mses[best],
        "mse_at_final": report.train_action_mses[-1],
        "mse_ratio": report.train_action_mses[best] / max(report.train_action_mses[-1], 1e-300),
    }
    (out / "earlystop.json").write_text(json.dumps(result, indent=1))
    return result


# ---------------------------------------------------------------------------
# method comparison bench

def run_bench(out_dir, dataset, model, enc, bank, artifact_paths: dict,
              repeats: int = 100, warmup: int = 5, num_queries: int = 20,
              kd_leaf_size: int = 16) -> dict:
    """Latency + size comparison over a mixed InD query stream.

    `artifact_paths` maps method -> list of files counted as its on-disk
    footprint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = build_kdtree(dataset, leaf_size=kd_leaf_size)
    cells = dataset.cfg.retained_cells()
    queries = [make_scenario("ind", dataset.cfg, cells=[cells[i % len(cells)]]).queries[0].obs
               for i in range(num_queries)]
    infer_rng = make_rng(999)

    methods = {
        "alt": (lambda obs: query(bank, enc, obs), artifact_paths["alt"]),
        "kdtree": (lambda obs: kdtree_query(index, obs), artifact_paths["kdtree"]),
        "diffusion": (lambda obs: infer_action(model, obs, infer_rng), artifact_paths["diffusion"]),
    }
    records = bench_compare(methods, queries, warmup=warmup, repeats=repeats)
    by_name = {r.method: r for r in records}
    result = {
        "records": [r.as_dict() for r in records],
        "latency_ratio_alt_vs_diffusion": by_name["alt"].median_s / by_name["diffusion"].median_s,
        "bytes_ratio_alt_vs_diffusion": by_name["alt"].bytes_on_disk / by_name["diffusion"].bytes_on_disk,
        "ordering_ok": (by_name["alt"].median_s < by_name["kdtree"].median_s
                        < by_name["diffusion"].median_s),
    }
    _write_csv(out / "bench.csv", ["method", "median_s", "iqr_s", "bytes_on_disk", "queries"],
               [[r.method, r.median_s, r.iqr_s, r.bytes_on_disk, r.queries] for r in records])
    (out / "bench.json").write_text(json.dumps(result, indent=1))
    return result


def run_experiment(config: dict, out_root) -> dict:
    """Config-driven dispatcher. `config["experiment"]` selects the suite;
    remaining keys are its keyword arguments."""
    cfg = dict(config)
    kind = cfg.pop("experiment", None)
    out = Path(out_root)
    if kind == "regimes":
        return run_regime_suite(out, **cfg)
    if kind == "memorization":
        return run_memorization_suite(out, **cfg)
    if kind == "earlystop":
        return run_earlystop(out, **cfg)
    raise ValueError(f"unknown experiment kind {kind!r}; "
                     "choose from regimes, memorization, earlystop")
