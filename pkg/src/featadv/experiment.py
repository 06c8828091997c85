"""Batch runner: sample source-guide pairs, attack, analyze, report.

Writes one CSV row per (layer, delta, pair) and a JSON summary of medians and
extremes.  Rows are computed independently and written in plan order, so runs
are byte-identical regardless of the worker count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import adversary as A
from . import analysis as S
from . import network as N
from .exceptions import FeatAdvError

GENERATORS = ("feature-opt", "feature-linear", "feat-fgrad",
              "label-fgrad", "label-opt")

CSV_COLUMNS = (
    "pair_id", "source_id", "guide_id", "layer", "delta", "generator",
    "iterations_used", "final_objective", "r_guide", "r_guide_nn", "r_source",
    "rank_alpha", "rank_guide", "rank_diff", "nn_intersection",
    "rank_nn1_alpha", "delta_loglik_alpha", "omega_alpha",
    "label_source", "label_alpha", "label_guide", "error",
)

SUMMARY_FIELDS = (
    "iterations_used", "final_objective", "r_guide", "r_guide_nn", "r_source",
    "rank_alpha", "rank_guide", "rank_diff", "nn_intersection",
    "rank_nn1_alpha", "delta_loglik_alpha", "omega_alpha",
)


@dataclass(frozen=True)
class ExperimentPlan:
    pairs: int = 100
    layers: tuple = ("fc2",)
    deltas: tuple = (10.0,)
    generator: str = "feature-opt"
    max_iterations: int = 500
    knn: int = 3
    ppca_dim: int = 10
    analyses: tuple = ("distances", "ranks", "manifold", "angular")
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.pairs < 1:
            raise ValueError("pair count must be at least 1")
        for d in self.deltas:
            if not (0.0 < d <= 255.0):
                raise ValueError(f"delta {d} outside (0, 255]")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def sample_pairs(corpus, count, seed):
    """Seeded (source_id, guide_id) pairs with distinct classes."""
    labels = np.asarray(corpus.labels)
    if len(set(labels.tolist())) < 2:
        raise FeatAdvError("pair sampling needs at least two classes")
    rng = np.random.Generator(np.random.Philox(
        key=np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(0)])))
    pairs = []
    for _ in range(count):
        s = int(rng.integers(len(labels)))
        while True:
            g = int(rng.integers(len(labels)))
            if labels[g] != labels[s]:
                break
        pairs.append((s, g))
    return pairs


def _generate(net, corpus, plan, layer, delta, source_id, guide_id):
    """Run the planned generator; (image, iterations_used, final_objective)."""
    source = corpus.images[source_id]
    guide = corpus.images[guide_id]
    gen = plan.generator
    if gen in ("feature-opt", "feature-linear"):
        config = A.AdvConfig(delta=delta, layer=layer,
                             max_iterations=plan.max_iterations)
        fn = A.feature_opt if gen == "feature-opt" else A.feature_linear
        res = fn(net, source, guide, config)
        return res.adversarial_image, len(res.trajectory) - 1, res.trajectory[-1][1]
    if gen == "feat-fgrad":
        adv = A.feat_fgrad(net, source, guide, layer, delta)
        g_rep = N.representation(net, guide, layer)
        obj, _ = N.feature_distance_grad(net, adv, layer, g_rep)
        return adv, 1, obj
    target = int(corpus.labels[guide_id])
    if gen == "label-fgrad":
        adv = A.label_fgrad(net, source, target, delta)
        loss, _ = A.label_loss_grad(net, adv, target)
        return adv, 1, loss
    config = A.AdvConfig(delta=delta, layer=layer,
                         max_iterations=plan.max_iterations)
    res = A.label_opt(net, source, target, config)
    return res.adversarial_image, len(res.trajectory) - 1, res.trajectory[-1][1]


def _pair_row(net, plan, corpus, indexes, layer, delta, pair_id, source_id,
              guide_id):
    row = dict.fromkeys(CSV_COLUMNS, "")
    row.update(pair_id=pair_id, source_id=source_id, guide_id=guide_id,
               layer=layer, delta=delta, generator=plan.generator, error="")
    index_e, index_c = indexes[layer]
    try:
        adv, iters, obj = _generate(net, corpus, plan, layer, delta,
                                    source_id, guide_id)
        row.update(iterations_used=iters, final_objective=obj)
        alpha_rep = N.representation(net, adv, layer)
        if "distances" in plan.analyses:
            d = S.distance_ratios(index_e, alpha_rep, source_id, guide_id)
            row.update(r_guide=d.r_guide, r_guide_nn=d.r_guide_nn,
                       r_source=d.r_source)
        if "ranks" in plan.analyses:
            r = S.rank_report(index_e, alpha_rep, guide_id, k=plan.knn)
            row.update(rank_alpha=r.rank_alpha, rank_guide=r.rank_guide,
                       rank_diff=r.rank_diff, nn_intersection=r.nn_intersection,
                       rank_nn1_alpha=r.rank_nn1_alpha)
        if "manifold" in plan.analyses or "angular" in plan.analyses:
            sets = S.neighbor_sets(index_c, guide_id, plan.seed)
            ref = index_c.reps[list(sets.n_ref)]
            guide_rep = index_c.reps[guide_id]
            if "manifold" in plan.analyses:
                model = S.PpcaGaussian(ref, guide_rep, plan.ppca_dim)
                row.update(delta_loglik_alpha=model.delta_loglik(alpha_rep))
            if "angular" in plan.analyses:
                row.update(omega_alpha=S.angular_consistency(
                    alpha_rep, guide_rep, ref))
        if net.spec.head is not None:
            row.update(
                label_source=N.classify(net, corpus.images[source_id])[0],
                label_alpha=N.classify(net, adv)[0],
                label_guide=N.classify(net, corpus.images[guide_id])[0])
    except FeatAdvError as exc:
        row["error"] = str(exc)
    return row


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return "nan" if math.isnan(v) else format(v, ".10g")


def run_experiment(net, corpus, plan, out_dir):
    """Execute a plan; writes results.csv and summary.json, returns the rows."""
    pairs = sample_pairs(corpus, plan.pairs, plan.seed)
    indexes = {}
    for layer in plan.layers:
        index_e = S.build_index(net, corpus, layer, S.EUCLIDEAN)
        index_c = S.NeighborIndex(layer, S.COSINE, index_e.reps, index_e.labels)
        indexes[layer] = (index_e, index_c)

    jobs = [(layer, delta, pid, s, g)
            for layer in plan.layers
            for delta in plan.deltas
            for pid, (s, g) in enumerate(pairs)]

    def work(job):
        layer, delta, pid, s, g = job
        return _pair_row(net, plan, corpus, indexes, layer, delta, pid, s, g)

    if plan.workers == 1:
        rows = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=plan.workers) as pool:
            rows = list(pool.map(work, jobs))

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")

    summary = {"pairs": plan.pairs, "generator": plan.generator,
               "layers": list(plan.layers), "deltas": list(plan.deltas),
               "seed": plan.seed,
               "errors": sum(1 for r in rows if r["error"])}
    for field in SUMMARY_FIELDS:
        vals = [float(r[field]) for r in rows
                if r[field] != "" and not (isinstance(r[field], float)
                                           and math.isnan(r[field]))]
        if vals:
            summary[field] = {"median": float(np.median(vals)),
                              "min": min(vals), "max": max(vals)}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rows
