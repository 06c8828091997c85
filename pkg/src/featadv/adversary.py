"""Adversary generators.

feature_opt pushes an image's layer representation toward a guide's inside an
L-inf pixel budget; feature_linear does the same against the first-order
expansion of the representation at the source.  label_opt and the two fast
gradient constructions are the classification-only baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import network as N
from . import optim
from .exceptions import DegenerateInputError, NoAdversaryError, SpecError

PIXEL_MAX = 255.0


@dataclass(frozen=True)
class AdvConfig:
    delta: float = 10.0
    layer: str = "fc2"
    max_iterations: int = 500
    history_size: int = 10
    grad_tol: float = 1e-6
    ftol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.delta <= PIXEL_MAX):
            raise ValueError(f"delta {self.delta} outside [0, {PIXEL_MAX:g}]")
        if self.max_iterations < 1 or self.history_size < 1:
            raise ValueError("iteration and history counts must be positive")


@dataclass
class AdvResult:
    adversarial_image: np.ndarray
    perturbation: np.ndarray
    trajectory: list                 # (iteration, objective, distance ratio)
    termination: str
    final_ratio: float
    penalty_weight: float | None = None   # label_opt only: chosen c


def _prep_pair(net, source, guide, layer):
    source = N._check_image(net, source)
    guide = N._check_image(net, guide)
    if np.array_equal(source, guide):
        raise DegenerateInputError("source and guide are identical")
    guide_rep = N.representation(net, guide, layer)
    source_rep = N.representation(net, source, layer)
    d_sg = float(np.linalg.norm(source_rep - guide_rep))
    if d_sg == 0.0:
        raise DegenerateInputError(
            "source and guide have identical representations at this layer")
    return source, guide_rep, source_rep, d_sg


def feature_opt(net, source, guide, config):
    """Minimize the representation distance to the guide inside the delta-box."""
    source, guide_rep, _, d_sg = _prep_pair(net, source, guide, config.layer)
    box = optim.pixel_box(source, config.delta)

    def fg(x):
        return N.feature_distance_grad(net, x, config.layer, guide_rep)

    trajectory = []

    def record(it, x, f):
        trajectory.append((it, f, math.sqrt(max(f, 0.0)) / d_sg))

    res = optim.lbfgsb_minimize(fg, source, box, config, callback=record)
    adv = res.point
    return AdvResult(
        adversarial_image=adv,
        perturbation=adv - source,
        trajectory=trajectory,
        termination=res.termination,
        final_ratio=math.sqrt(max(res.objective, 0.0)) / d_sg,
    )


def feature_linear(net, source, guide, config):
    """Like feature_opt, but against the representation linearized at the source.

    The linearization point never moves; the reported ratios are against the
    true (nonlinear) representations.
    """
    source, guide_rep, source_rep, d_sg = _prep_pair(net, source, guide, config.layer)
    box = optim.pixel_box(source, config.delta)
    jvp_fn, vjp_fn = N.linear_maps(net, source, config.layer)
    r0 = source_rep - guide_rep

    def fg(x):
        residual = r0 + jvp_fn(x - source)
        return float(residual @ residual), 2.0 * vjp_fn(residual)

    trajectory = []

    def record(it, x, f):
        true_rep = N.representation(net, x, config.layer)
        trajectory.append((it, f, float(np.linalg.norm(true_rep - guide_rep)) / d_sg))

    res = optim.lbfgsb_minimize(fg, source, box, config, callback=record)
    adv = res.point
    true_rep = N.representation(net, adv, config.layer)
    return AdvResult(
        adversarial_image=adv,
        perturbation=adv - source,
        trajectory=trajectory,
        termination=res.termination,
        final_ratio=float(np.linalg.norm(true_rep - guide_rep)) / d_sg,
    )


def feat_fgrad(net, source, guide, layer, delta):
    """Single signed descent step on the feature distance, clamped to the box."""
    source, guide_rep, _, _ = _prep_pair(net, source, guide, layer)
    _, g = N.feature_distance_grad(net, source, layer, guide_rep)
    return optim.project_box(source - delta * np.sign(g), source, delta)


def _softmax(scores):
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


def label_loss_grad(net, image, target_label, check_range=True):
    """(cross-entropy toward target_label, its image gradient)."""
    if net.spec.head is None:
        raise SpecError("network has no classification head")
    if not (0 <= target_label < net.spec.head):
        raise ValueError(f"label {target_label} outside [0, {net.spec.head})")
    inputs, acts = N._forward_collect(net, image, check_range=check_range)
    scores = acts[net.spec.layers[-1][0]]
    p = _softmax(scores)
    loss = -math.log(max(p[target_label], 1e-300))
    g = p.copy()
    g[target_label] -= 1.0
    for i in range(len(net.spec.layers) - 1, -1, -1):
        name, prim = net.spec.layers[i]
        g = N.L.vjp(prim, inputs[i], net.weight(name), g)
    return loss, g


def label_fgrad(net, source, target_label, delta):
    """Single signed descent step on the targeted cross-entropy."""
    source = N._check_image(net, source)
    _, g = label_loss_grad(net, source, target_label)
    return np.clip(source - delta * np.sign(g), 0.0, PIXEL_MAX)


_C_GRID = tuple(1e-3 * 10.0 ** i for i in range(7))


def label_opt(net, source, target_label, opt):
    """Penalized misclassification search with a geometric line search on c.

    Minimizes loss(f(I), target) + c * mean((I - source)^2) over the full pixel
    box
    for each c, keeps the runs whose argmax flips to the target, refines once
    at the geometric midpoint of the success/failure bracket, and returns the
    success with the smallest perturbation norm.  There is no guide image, so
    the trajectory ratio and final_ratio fields are NaN.
    """
    source = N._check_image(net, source)
    label0, _ = N.classify(net, source)
    if label0 == target_label:
        raise DegenerateInputError(
            f"source already classified as target label {target_label}")
    box = optim.BoxConstraint(np.zeros_like(source), np.full_like(source, PIXEL_MAX))

    n_px = source.size

    def run(c):
        def fg(x):
            loss, g = label_loss_grad(net, x, target_label)
            eps = x - source
            pen = (c / n_px) * float(eps.ravel() @ eps.ravel())
            return loss + pen, g + (2.0 * c / n_px) * eps

        res = optim.lbfgsb_minimize(fg, source, box, opt)
        label, scores = N.classify(net, res.point)
        margin = float(scores[target_label] - max(
            s for i, s in enumerate(scores) if i != target_label))
        return res, label == target_label, margin

    runs = [(c,) + run(c) for c in _C_GRID]
    flags = [ok for _, _, ok, _ in runs]
    if any(flags) and not all(flags):
        # refine once at the boundary around the largest successful c
        pivot = None
        for i in range(len(runs) - 1):
            if flags[i] != flags[i + 1]:
                pivot = i
        c_mid = math.sqrt(runs[pivot][0] * runs[pivot + 1][0])
        runs.append((c_mid,) + run(c_mid))

    successes = [(c, res) for c, res, ok, _ in runs if ok]
    if not successes:
        best_margin = max(m for _, _, _, m in runs)
        raise NoAdversaryError(
            "no penalty weight produced the target label", best_margin)

    def eps_norm(item):
        _, res = item
        return float(np.linalg.norm(res.point - source))

    c, res = min(successes, key=eps_norm)
    adv = res.point
    return AdvResult(
        adversarial_image=adv,
        perturbation=adv - source,
        trajectory=[(it, f, math.nan) for it, f in res.trajectory],
        termination=res.termination,
        final_ratio=math.nan,
        penalty_weight=c,
    )
