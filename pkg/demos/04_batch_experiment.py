"""Run a small batch experiment and read the aggregate report.

The runner fans source/guide pairs over a worker pool, runs the configured
generator plus analysis battery on each, and writes results.csv and
summary.json.  Output bytes are identical no matter how many workers run.
"""

import json
import pathlib
import tempfile

import featadv as fa

net = fa.init_network(fa.refnet32(with_head=True), seed=7,
                      scheme="orthonormal")
corpus = fa.generate_corpus(0)
plan = fa.ExperimentPlan(pairs=8, layers=("fc2",), deltas=(10.0,),
                         generator="feature-opt", max_iterations=200,
                         analyses=("distances", "ranks", "manifold",
                                   "angular"),
                         seed=5, workers=4)

out_dir = pathlib.Path(tempfile.mkdtemp(prefix="featadv-demo-"))
rows = fa.run_experiment(net, corpus, plan, out_dir)

print(f"wrote {out_dir / 'results.csv'} ({len(rows)} rows)")
print("pair  src->guide   final ratio   guide-dist ratio   rank diff")
for row in rows:
    print(f"{row['pair_id']:4d}  {row['source_id']:3d}->{row['guide_id']:3d}"
          f"   {row['r_guide']:11.4g}   {row['r_guide_nn']:16.4g}"
          f"   {row['rank_diff']:+9.1f}")

with open(out_dir / "summary.json") as fh:
    summary = json.load(fh)
print("\nsummary medians")
for key in ("r_guide", "rank_diff", "nn_intersection", "delta_loglik_alpha",
            "omega_alpha"):
    stats = summary[key]
    print(f"  {key}: median {stats['median']:.4g} "
          f"(min {stats['min']:.4g}, max {stats['max']:.4g})")
