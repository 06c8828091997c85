"""Command-line entry points.

Subcommands mirror the library surface: network and corpus management,
adversary generation, the analysis battery, representation inversion, and the
batch experiment runner.  Every command that takes a seed is byte-reproducible.
Exit codes: 0 success, 1 setup or runtime failure, 2 invalid arguments.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import adversary as A
from . import analysis as S
from . import corpus as C
from . import experiment as E
from . import inversion as V
from . import io_formats as F
from . import network as N
from .exceptions import FeatAdvError


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load_pair_args(args):
    net = N.load_network(args.net)
    corp = C.load_corpus(args.corpus)
    return net, corp


def _adv_config(args):
    return A.AdvConfig(delta=args.delta, layer=args.layer,
                       max_iterations=args.iterations)


def _write_adv(args, image):
    F.save_tensor(image, args.out)
    if args.ppm:
        F.save_ppm(np.clip(image, 0.0, 255.0), args.ppm)


def cmd_net_init(args):
    net = N.init_network(N.refnet32(with_head=args.head), seed=args.seed,
                         scheme=args.scheme)
    N.save_network(net, args.out)
    return 0


def cmd_net_describe(args):
    net = N.load_network(args.net)
    shapes = net.spec.layer_shapes()
    info = {
        "input_shape": list(net.spec.input_shape),
        "head": net.spec.head,
        "seed": net.init_record[0],
        "scheme": net.init_record[1],
        "layers": [
            {"name": name, "kind": prim.kind,
             "output_shape": list(shapes[name])}
            for name, prim in net.spec.layers
        ],
    }
    _print_json(info)
    return 0


def cmd_corpus_gen(args):
    corp = C.generate_corpus(args.seed, classes=args.classes,
                             per_class=args.per_class)
    C.save_corpus(corp, args.out)
    return 0


def cmd_corpus_describe(args):
    corp = C.load_corpus(args.corpus)
    labels = list(corp.labels)
    _print_json({
        "size": corp.size,
        "shape": list(corp.shape),
        "classes": sorted(set(labels)),
        "per_class": {str(c): labels.count(c) for c in sorted(set(labels))},
    })
    return 0


def cmd_adv(args):
    net, corp = _load_pair_args(args)
    source = corp.images[args.source_id]
    if args.generator in ("feature-opt", "feature-linear"):
        fn = A.feature_opt if args.generator == "feature-opt" else A.feature_linear
        res = fn(net, source, corp.images[args.guide_id], _adv_config(args))
        _write_adv(args, res.adversarial_image)
        _print_json({"final_ratio": res.final_ratio,
                     "termination": res.termination,
                     "iterations": len(res.trajectory) - 1})
    elif args.generator == "feat-fgrad":
        adv = A.feat_fgrad(net, source, corp.images[args.guide_id],
                           args.layer, args.delta)
        _write_adv(args, adv)
    elif args.generator == "label-fgrad":
        adv = A.label_fgrad(net, source, args.target_label, args.delta)
        _write_adv(args, adv)
    else:
        res = A.label_opt(net, source, args.target_label, _adv_config(args))
        _write_adv(args, res.adversarial_image)
        _print_json({"penalty_weight": res.penalty_weight,
                     "perturbation_norm": float(np.linalg.norm(res.perturbation)),
                     "termination": res.termination})
    return 0


def cmd_analyze(args):
    net, corp = _load_pair_args(args)
    alpha_rep = N.representation(net, F.load_tensor(args.adv), args.layer)
    if args.what == "sparsity":
        trace_s = N.forward_trace(net, corp.images[args.source_id])
        trace_a = N.forward_trace(net, F.load_tensor(args.adv))
        layers = args.layers.split(",") if args.layers else \
            [name for name, _ in net.spec.layers]
        rep = S.sparsity_stats(trace_s, trace_a, layers)
        _print_json({k: {"delta_s": v[0], "iou": v[1]}
                     for k, v in rep.per_layer.items()})
        return 0
    metric = S.COSINE if args.what in ("manifold", "angular") else S.EUCLIDEAN
    index = S.build_index(net, corp, args.layer, metric)
    if args.what == "distances":
        d = S.distance_ratios(index, alpha_rep, args.source_id, args.guide_id)
        _print_json({"r_guide": d.r_guide, "r_guide_nn": d.r_guide_nn,
                     "r_source": d.r_source})
    elif args.what == "ranks":
        r = S.rank_report(index, alpha_rep, args.guide_id, k=args.knn)
        _print_json({"rank_alpha": r.rank_alpha, "rank_guide": r.rank_guide,
                     "rank_diff": r.rank_diff,
                     "nn_intersection": r.nn_intersection,
                     "rank_nn1_alpha": r.rank_nn1_alpha})
    else:
        sets = S.neighbor_sets(index, args.guide_id, args.seed)
        ref = index.reps[list(sets.n_ref)]
        guide_rep = index.reps[args.guide_id]
        if args.what == "manifold":
            rep = S.ppca_delta_loglik(
                ref, guide_rep, alpha_rep,
                index.reps[list(sets.n_c)], index.reps[list(sets.n_f)],
                q=args.ppca_dim)
            _print_json({"delta_loglik_alpha": rep.delta_loglik_alpha,
                         "delta_loglik_nc": list(rep.delta_loglik_nc),
                         "delta_loglik_nf": list(rep.delta_loglik_nf),
                         "noise_variance": rep.noise_variance,
                         "ppca_dim": rep.ppca_dim})
        else:
            rep = S.angular_report(alpha_rep, guide_rep, ref,
                                   index.reps[list(sets.n_c)],
                                   index.reps[list(sets.n_f)])
            _print_json({"omega_alpha": rep.omega_alpha,
                         "omega_nc": list(rep.omega_nc),
                         "omega_nf": list(rep.omega_nf)})
    return 0


def cmd_invert(args):
    net = N.load_network(args.net)
    if args.rep:
        target = F.load_tensor(args.rep).ravel()
    else:
        corp = C.load_corpus(args.corpus)
        target = N.representation(net, corp.images[args.image_id], args.layer)
    config = V.InversionConfig(
        layer=args.layer, lambda_alpha=args.lambda_alpha,
        lambda_tv=args.lambda_tv, iterations=args.iterations, seed=args.seed)
    image = V.invert_representation(net, target, config)
    F.save_tensor(image, args.out)
    if args.ppm:
        F.save_ppm(image, args.ppm)
    return 0


def cmd_experiment(args):
    net = N.load_network(args.net)
    if args.corpus:
        corp = C.load_corpus(args.corpus)
    else:
        corp = C.generate_corpus(args.corpus_seed)
    plan = E.ExperimentPlan(
        pairs=args.pairs,
        layers=tuple(args.layers.split(",")),
        deltas=tuple(float(d) for d in args.deltas.split(",")),
        generator=args.generator,
        max_iterations=args.iterations,
        analyses=tuple(args.analyses.split(",")) if args.analyses else (),
        seed=args.seed,
        workers=args.workers,
    )
    E.run_experiment(net, corp, plan, args.out_dir)
    return 0


def _add_net_corpus(p, corpus=True):
    p.add_argument("--net", required=True, help="FADVNET network file")
    if corpus:
        p.add_argument("--corpus", required=True, help="FCRP1 corpus file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="featadv",
        description="Feature adversaries: generation, analysis, inversion.")
    sub = parser.add_subparsers(dest="command", required=True)

    net = sub.add_parser("net", help="network management").add_subparsers(
        dest="action", required=True)
    p = net.add_parser("init", help="create and save a refnet-32 network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheme", choices=("gaussian", "orthonormal"),
                   default="orthonormal")
    p.add_argument("--head", action="store_true",
                   help="append the 10-way classification head")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_net_init)
    p = net.add_parser("describe", help="print network structure as JSON")
    _add_net_corpus(p, corpus=False)
    p.set_defaults(func=cmd_net_describe)

    corp = sub.add_parser("corpus", help="corpus management").add_subparsers(
        dest="action", required=True)
    p = corp.add_parser("gen", help="generate a synthetic labeled corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=C.DEFAULT_CLASSES)
    p.add_argument("--per-class", type=int, default=C.DEFAULT_PER_CLASS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus_gen)
    p = corp.add_parser("describe", help="print corpus composition as JSON")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_corpus_describe)

    adv = sub.add_parser("adv", help="adversary generation").add_subparsers(
        dest="generator", required=True)
    for gen in E.GENERATORS:
        p = adv.add_parser(gen)
        _add_net_corpus(p)
        p.add_argument("--source-id", type=int, required=True)
        if gen in ("feature-opt", "feature-linear", "feat-fgrad"):
            p.add_argument("--guide-id", type=int, required=True)
        else:
            p.add_argument("--target-label", type=int, required=True)
        p.add_argument("--layer", default="fc2")
        p.add_argument("--delta", type=float, default=10.0)
        p.add_argument("--iterations", type=int, default=500)
        p.add_argument("--out", required=True, help="FTNS1 output path")
        p.add_argument("--ppm", help="optional PPM viewing copy")
        p.set_defaults(func=cmd_adv)

    ana = sub.add_parser("analyze", help="statistics battery").add_subparsers(
        dest="what", required=True)
    for what in ("distances", "ranks", "manifold", "angular", "sparsity"):
        p = ana.add_parser(what)
        _add_net_corpus(p)
        p.add_argument("--adv", required=True, help="FTNS1 adversarial image")
        p.add_argument("--layer", default="fc2")
        if what in ("distances", "sparsity"):
            p.add_argument("--source-id", type=int, required=True)
        if what in ("distances", "ranks", "manifold", "angular"):
            p.add_argument("--guide-id", type=int, required=True)
        if what == "ranks":
            p.add_argument("--knn", type=int, default=3)
        if what in ("manifold", "angular"):
            p.add_argument("--seed", type=int, default=0)
        if what == "manifold":
            p.add_argument("--ppca-dim", type=int, default=10)
        if what == "sparsity":
            p.add_argument("--layers", help="comma-separated layer names")
        p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("invert", help="reconstruct an image from a representation")
    p.add_argument("--net", required=True)
    p.add_argument("--corpus", help="corpus supplying --image-id")
    p.add_argument("--image-id", type=int)
    p.add_argument("--rep", help="FTNS1 target representation")
    p.add_argument("--layer", default="fc2")
    p.add_argument("--lambda-alpha", type=float, default=1e-8)
    p.add_argument("--lambda-tv", type=float, default=1e-6)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ppm")
    p.set_defaults(func=cmd_invert)

    exp = sub.add_parser("experiment", help="batch runs").add_subparsers(
        dest="action", required=True)
    p = exp.add_parser("run")
    p.add_argument("--net", required=True)
    p.add_argument("--corpus")
    p.add_argument("--corpus-seed", type=int, default=0,
                   help="generate the corpus if no file is given")
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--layers", default="fc2", help="comma-separated")
    p.add_argument("--deltas", default="10", help="comma-separated")
    p.add_argument("--generator", choices=E.GENERATORS, default="feature-opt")
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--analyses", default="distances,ranks,manifold,angular")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "invert" and not args.rep and (
            args.corpus is None or args.image_id is None):
        parser.error("invert needs --rep or both --corpus and --image-id")
    try:
        return args.func(args)
    except (ValueError, TypeError) as exc:
        print(f"error: invalid arguments: {exc}", file=sys.stderr)
        return 2
    except (FeatAdvError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
