"""Search-method benchmark over synthetic scenes with known boxes.

Loads ground-truth instances from a generated scene set, runs the swarm
search and the grid baseline at matched candidate budgets, and reports
final cost, ground-plane IoU against the true box, and wall time per run.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .assoc import CrossModalProposal, frustum_from_box, load_proposals, points_to_ray_distances
from .config import PipelineConfig
from .costfn import adaptive_surface_clip
from .errors import ValidationError
from .geom import BoxParams, iou_bev
from .optimizer import greedy_search, pso_search
from .pipeline import derive_pair_seed, discover_frames
from .sceneprep import clusters_from_labels, load_point_labels, load_scene


@dataclass(eq=False)
class BenchInstance:
    """One ground-truth object wired up as a ready-to-fit pair."""

    key: str
    class_id: str
    pair: CrossModalProposal
    gt_box: BoxParams


def load_bench_instances(config: PipelineConfig) -> list[BenchInstance]:
    """Every ground-truth instance under the scenes dir, in frame order.

    Requires the sidecars the synthetic generator writes: ``<id>.gt.json``
    with true boxes and ``<id>.ptlabels.txt`` tying points to instances.
    """
    instances: list[BenchInstance] = []
    for frame_id in discover_frames(config.scenes_dir):
        gt_path = config.scenes_dir / f"{frame_id}.gt.json"
        labels_path = config.scenes_dir / f"{frame_id}.ptlabels.txt"
        if not gt_path.exists():
            raise ValidationError(f"frame {frame_id}: benchmark needs {gt_path.name}")
        if not labels_path.exists():
            raise ValidationError(f"frame {frame_id}: benchmark needs {labels_path.name}")
        scene = load_scene(config.scenes_dir, frame_id)
        labels = load_point_labels(labels_path, len(scene.cloud))
        clusters = clusters_from_labels(scene.cloud, labels)
        proposals = load_proposals(config.scenes_dir / f"{frame_id}.proposals.json")
        try:
            gt = json.loads(gt_path.read_text())
            entries = gt["instances"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"{gt_path}: {exc}") from exc
        if len(entries) != len(clusters):
            raise ValidationError(
                f"frame {frame_id}: {len(entries)} ground-truth instances but "
                f"{len(clusters)} labeled clusters"
            )
        for k, entry in enumerate(entries):
            b = entry["box"]
            gt_box = BoxParams(
                float(b["x"]), float(b["y"]), float(b["z"]),
                float(b["l"]), float(b["w"]), float(b["h"]), float(b["ry"]),
            )
            prop = proposals[int(entry["proposal_index"])]
            calib = scene.camera(prop.camera_id)
            frustum = frustum_from_box(prop.box, calib, config.d_min, config.d_max)
            cluster = clusters[k]
            pts = scene.cloud[cluster.point_indices]
            dist = float(points_to_ray_distances(pts, frustum.center).min())
            pair = CrossModalProposal(prop, cluster, scene, dist, frustum.center)
            instances.append(
                BenchInstance(
                    key=str(entry.get("id", f"{frame_id}:{k}")),
                    class_id=str(entry["class"]),
                    pair=pair,
                    gt_box=gt_box,
                )
            )
    return instances


def bench_weights(inst: BenchInstance, config: PipelineConfig):
    anchor = config.anchors[inst.class_id]
    c_surface = config.surface_clip
    if c_surface is None:
        c_surface = adaptive_surface_clip(
            inst.pair.scene.ego, inst.pair.cluster.centroid, anchor
        )
    return anchor, replace(config.weights, c_surface=c_surface)


def run_bench(
    config: PipelineConfig,
    methods: tuple[str, ...] = ("greedy", "adaptive"),
    budgets: tuple[int, ...] | None = None,
    out_csv: str | Path | None = None,
    instances: list[BenchInstance] | None = None,
) -> list[dict]:
    """Fit every instance with every method at every budget.

    Returns one row per run: instance, method, budget, final cost,
    ground-plane IoU against the true box, wall seconds. The adaptive
    search spends its budget as swarm_size x iterations; the greedy
    baseline scans the largest even grid inside the budget.
    """
    for m in methods:
        if m not in ("greedy", "adaptive"):
            raise ValidationError(f"unknown bench method {m!r}")
    if budgets is None:
        budgets = config.bench_budgets
    if instances is None:
        instances = load_bench_instances(config)
    rows: list[dict] = []
    for inst in instances:
        anchor, weights = bench_weights(inst, config)
        for budget in budgets:
            for method in methods:
                t0 = time.perf_counter()
                if method == "greedy":
                    result = greedy_search(inst.pair, anchor, weights, budget)
                else:
                    n_iter = max(1, budget // config.swarm.n_swarm)
                    seed = derive_pair_seed(config.seed, f"bench:{inst.key}", budget)
                    cfg = replace(config.swarm, n_iter=n_iter, seed=seed)
                    result = pso_search(inst.pair, anchor, weights, cfg, record_trace=False)
                rows.append(
                    {
                        "instance": inst.key,
                        "method": method,
                        "budget": budget,
                        "cost": result.best_cost.total,
                        "bev_iou": iou_bev(result.best_box, inst.gt_box),
                        "wall_time": time.perf_counter() - t0,
                    }
                )
    if out_csv is not None:
        write_bench_csv(rows, out_csv)
    return rows


def write_bench_csv(rows: list[dict], path: str | Path) -> None:
    fields = ["instance", "method", "budget", "cost", "bev_iou", "wall_time"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})
