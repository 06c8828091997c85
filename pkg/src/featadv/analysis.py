"""Representation-space statistics.

Everything operates on a NeighborIndex: cached per-layer representations of a
labeled corpus, with exact (brute force) neighbor queries under Euclidean or
cosine distance.  Covers distance ratios, mean-KNN-distance rank percentiles,
3NN intersection, the reference/close/far neighbor sets around a guide, the
PPCA tangent-space log-likelihood, angular consistency, and activation
sparsity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as N
from .exceptions import DegenerateInputError, FeatAdvError

EUCLIDEAN = "euclidean"
COSINE = "cosine"


@dataclass(frozen=True)
class NeighborIndex:
    layer: str
    metric: str
    reps: np.ndarray       # (n, d), row i == representation of corpus image i
    labels: np.ndarray     # (n,) integer class ids

    @property
    def size(self):
        return self.reps.shape[0]

    def class_ids(self, class_id):
        return np.flatnonzero(self.labels == class_id)

    def distances(self, query_rep):
        """Distances from a query to every indexed point."""
        q = np.asarray(query_rep, dtype=np.float64)
        if self.metric == EUCLIDEAN:
            diff = self.reps - q
            return np.sqrt(np.einsum("ij,ij->i", diff, diff))
        qn = np.linalg.norm(q)
        rn = np.linalg.norm(self.reps, axis=1)
        if qn == 0.0:
            return np.ones(self.size)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = (self.reps @ q) / (rn * qn)
        cos = np.where(rn == 0.0, 0.0, cos)
        return 1.0 - np.clip(cos, -1.0, 1.0)


@dataclass(frozen=True)
class DistanceReport:
    r_guide: float       # d(alpha, g) / d(s, g)
    r_guide_nn: float    # d(alpha, g) / mean 1-NN distance within guide class
    r_source: float      # d(alpha, s) / mean pairwise distance within source class


@dataclass(frozen=True)
class RankReport:
    rank_alpha: float
    rank_guide: float
    rank_diff: float
    nn_intersection: int
    rank_nn1_alpha: float


@dataclass(frozen=True)
class NeighborSets:
    n_ref: tuple    # 15 ids sampled from the guide's top-20 neighbors
    n_c: tuple      # the 5 remaining close neighbors
    n_f: tuple      # neighbors ranked 41-50


@dataclass(frozen=True)
class ManifoldReport:
    delta_loglik_alpha: float
    delta_loglik_nc: tuple
    delta_loglik_nf: tuple
    ppca_dim: int
    noise_variance: float


@dataclass(frozen=True)
class AngularReport:
    omega_alpha: float
    omega_nc: tuple
    omega_nf: tuple


@dataclass(frozen=True)
class SparsityReport:
    per_layer: dict     # layer name -> (delta_s, iou), both percentages


def build_index(net, corpus, layer, metric=EUCLIDEAN):
    """Cache the layer representation of every corpus image."""
    if metric not in (EUCLIDEAN, COSINE):
        raise ValueError(f"unknown metric {metric!r}")
    if not corpus.images:
        raise FeatAdvError("corpus is empty")
    reps = np.stack([N.representation(net, img, layer) for img in corpus.images])
    return NeighborIndex(layer=layer, metric=metric, reps=reps,
                         labels=np.asarray(corpus.labels, dtype=np.int64))


def knn_ids(index, query_rep, k, exclusions=()):
    """Ids of the k nearest indexed points; ties broken by lowest id."""
    d = index.distances(query_rep)
    mask = np.ones(index.size, dtype=bool)
    for e in exclusions:
        mask[e] = False
    cand = np.flatnonzero(mask)
    if cand.size < k:
        raise FeatAdvError(f"only {cand.size} candidates for {k}-NN query")
    order = cand[np.argsort(d[cand], kind="stable")]
    return tuple(int(i) for i in order[:k])


def distance_ratios(index, alpha_rep, source_id, guide_id):
    """The three distance ratios of the histogram analysis."""
    s_rep = index.reps[source_id]
    g_rep = index.reps[guide_id]
    one_point = NeighborIndex(index.layer, index.metric,
                              np.stack([s_rep, g_rep]), np.zeros(2, dtype=np.int64))
    d_sg = one_point.distances(g_rep)[0]
    if d_sg == 0.0:
        raise DegenerateInputError("source and guide representations coincide")
    d_ag = float(index.distances(alpha_rep)[guide_id])
    d_as = float(index.distances(alpha_rep)[source_id])

    g_class = index.class_ids(index.labels[guide_id])
    if g_class.size < 2:
        raise DegenerateInputError("guide class needs at least 2 members")
    nn_dists = []
    for m in g_class:
        d = index.distances(index.reps[m])
        others = g_class[g_class != m]
        nn_dists.append(d[others].min())
    d1bar = float(np.mean(nn_dists))

    s_class = index.class_ids(index.labels[source_id])
    pair_dists = []
    for i, m in enumerate(s_class):
        d = index.distances(index.reps[m])
        pair_dists.extend(d[s_class[i + 1:]])
    dbar = float(np.mean(pair_dists))
    if d1bar == 0.0 or dbar == 0.0:
        raise DegenerateInputError("class distance denominator is zero")
    return DistanceReport(r_guide=d_ag / d_sg, r_guide_nn=d_ag / d1bar,
                          r_source=d_as / dbar)


def _mean_knn_distance(index, query_rep, k, exclusions):
    d = index.distances(query_rep)
    mask = np.ones(index.size, dtype=bool)
    for e in exclusions:
        mask[e] = False
    cand = d[mask]
    if cand.size < k:
        raise FeatAdvError(f"only {cand.size} candidates for {k}-NN score")
    return float(np.mean(np.sort(cand, kind="stable")[:k]))


def rank_percentile(index, query_rep, class_id, k, exclusions=()):
    """Percentile of the query's mean-kNN-distance score within a class.

    0 means the densest region of the class.  ``exclusions`` are removed from
    every candidate set; each class member additionally excludes itself when
    scoring.  The percentile counts class members with strictly smaller score.
    """
    members = index.class_ids(class_id)
    excl = set(int(e) for e in exclusions)
    if members.size - len(excl.intersection(members.tolist())) <= k:
        raise FeatAdvError(
            f"class {class_id} too small for {k}-NN ranking after exclusions")
    q_score = _mean_knn_distance(index, query_rep, k, excl)
    smaller = 0
    for m in members:
        m_score = _mean_knn_distance(index, index.reps[m], k, excl | {int(m)})
        if m_score < q_score:
            smaller += 1
    return 100.0 * smaller / members.size


def rank_report(index, alpha_rep, guide_id, k=3):
    """Rank percentiles and kNN overlap of an adversary against its guide.

    The guide is excluded from all neighbor candidate sets, both for the
    adversary and for the guide's own score.
    """
    guide_class = int(index.labels[guide_id])
    rank_alpha = rank_percentile(index, alpha_rep, guide_class, k,
                                 exclusions=(guide_id,))
    rank_guide = rank_percentile(index, index.reps[guide_id], guide_class, k,
                                 exclusions=(guide_id,))
    nn_alpha = knn_ids(index, alpha_rep, k, exclusions=(guide_id,))
    nn_guide = knn_ids(index, index.reps[guide_id], k, exclusions=(guide_id,))
    n1 = nn_alpha[0]
    rank_nn1 = rank_percentile(index, index.reps[n1], guide_class, k,
                               exclusions=(guide_id, n1))
    return RankReport(
        rank_alpha=rank_alpha,
        rank_guide=rank_guide,
        rank_diff=rank_alpha - rank_guide,
        nn_intersection=len(set(nn_alpha) & set(nn_guide)),
        rank_nn1_alpha=rank_nn1,
    )


def neighbor_sets(index, guide_id, seed):
    """Reference/close/far neighbor sets around a guide (self excluded)."""
    if index.size < 51:
        raise FeatAdvError("neighbor sets need an index of at least 51 points")
    top50 = knn_ids(index, index.reps[guide_id], 50, exclusions=(guide_id,))
    top20 = np.array(top50[:20])
    rng = np.random.Generator(np.random.Philox(
        key=np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(0)])))
    pick = rng.choice(20, size=15, replace=False)
    n_ref = tuple(int(i) for i in top20[np.sort(pick)])
    n_c = tuple(int(i) for i in top20 if int(i) not in set(n_ref))
    n_f = tuple(top50[40:50])
    return NeighborSets(n_ref=n_ref, n_c=n_c, n_f=n_f)


class PpcaGaussian:
    """Gaussian from a maximum-likelihood PPCA fit with a relocated mean.

    Principal axes and eigenvalues come from the reference points' sample
    covariance; the mean is then replaced by the guide representation, so the
    log-likelihood is maximal at the guide.
    """

    def __init__(self, ref_reps, mean, q, noise_floor=1e-12):
        x = np.asarray(ref_reps, dtype=np.float64)
        n, d = x.shape
        if not (1 <= q <= n - 1):
            raise ValueError(f"ppca dim q={q} outside [1, {n - 1}]")
        centered = x - x.mean(axis=0)
        _, svals, vt = np.linalg.svd(centered, full_matrices=False)
        eig = (svals * svals) / n
        total = float(np.sum(eig))
        top = eig[:q] if eig.size >= q else np.pad(eig, (0, q - eig.size))
        sigma2 = max((total - float(np.sum(top))) / (d - q), noise_floor)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.q = q
        self.dim = d
        self.noise_variance = sigma2
        self.axes = vt[:q]                       # (q, d) orthonormal rows
        self.axis_vars = np.maximum(top, sigma2)  # model variance along each axis

    def _quad(self, x):
        y = np.asarray(x, dtype=np.float64) - self.mean
        c = self.axes @ y
        r2 = float(y @ y) - float(c @ c)
        return float(np.sum(c * c / self.axis_vars)) + max(r2, 0.0) / self.noise_variance

    def log_likelihood(self, x):
        logdet = (float(np.sum(np.log(self.axis_vars)))
                  + (self.dim - self.q) * np.log(self.noise_variance))
        return -0.5 * (self.dim * np.log(2.0 * np.pi) + logdet + self._quad(x))

    def delta_loglik(self, x):
        """L(x) - L(mean); nonpositive by construction."""
        return -0.5 * self._quad(x)


def ppca_delta_loglik(ref_reps, guide_rep, alpha_rep, nc_reps, nf_reps, q=10):
    """Log-likelihoods relative to the guide under the local PPCA Gaussian."""
    model = PpcaGaussian(ref_reps, guide_rep, q)
    return ManifoldReport(
        delta_loglik_alpha=model.delta_loglik(alpha_rep),
        delta_loglik_nc=tuple(model.delta_loglik(r) for r in nc_reps),
        delta_loglik_nf=tuple(model.delta_loglik(r) for r in nf_reps),
        ppca_dim=q,
        noise_variance=model.noise_variance,
    )


def angular_consistency(z_rep, guide_rep, ref_reps):
    """Mean cosine between directions from z and from the guide to each reference."""
    z = np.asarray(z_rep, dtype=np.float64)
    g = np.asarray(guide_rep, dtype=np.float64)
    terms = []
    for i, x in enumerate(np.asarray(ref_reps, dtype=np.float64)):
        a = x - z
        b = x - g
        na = np.linalg.norm(a)
        nb = np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise DegenerateInputError(
                f"reference point {i} coincides with a query point")
        terms.append(float(a @ b) / (na * nb))
    return float(np.clip(np.mean(terms), -1.0, 1.0))


def angular_report(alpha_rep, guide_rep, ref_reps, nc_reps, nf_reps):
    return AngularReport(
        omega_alpha=angular_consistency(alpha_rep, guide_rep, ref_reps),
        omega_nc=tuple(angular_consistency(r, guide_rep, ref_reps) for r in nc_reps),
        omega_nf=tuple(angular_consistency(r, guide_rep, ref_reps) for r in nf_reps),
    )


def sparsity_stats(trace_source, trace_alpha, layers):
    """Active-unit sparsity change and overlap between two traces."""
    per_layer = {}
    for name in layers:
        if name not in trace_source.activations or name not in trace_alpha.activations:
            raise FeatAdvError(f"layer {name!r} missing from trace")
        a_s = trace_source.activations[name].ravel() > 0
        a_a = trace_alpha.activations[name].ravel() > 0
        size = a_s.size
        delta_s = 100.0 * (int(a_a.sum()) - int(a_s.sum())) / size
        union = int(np.logical_or(a_a, a_s).sum())
        inter = int(np.logical_and(a_a, a_s).sum())
        iou = 100.0 if union == 0 else 100.0 * inter / union
        per_layer[name] = (delta_s, iou)
    return SparsityReport(per_layer=per_layer)
