"""Image reconstruction from a layer representation.

Minimizes a normalized representation-matching term plus a high-exponent range
penalty and a total-variation penalty over a unit-scale image variable, with
momentum gradient descent and adaptive step halving.  The optimization image
is fed to the network scaled by sigma, so a typical [0, 255] image maps to a
variable of roughly unit L2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as N
from .exceptions import DegenerateInputError

STEP_GROWTH = 1.1
MIN_STEP = 1e-20


@dataclass(frozen=True)
class InversionConfig:
    layer: str = "fc2"
    lambda_alpha: float = 1e-8
    lambda_tv: float = 1e-6
    alpha_exp: float = 6.0
    beta_exp: float = 2.0
    sigma: float | None = None      # default 255 * sqrt(pixel count)
    iterations: int = 2000
    step_size: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.lambda_alpha < 0 or self.lambda_tv < 0:
            raise ValueError("regularizer weights must be nonnegative")
        if self.alpha_exp <= 1.0:
            raise ValueError("alpha_exp must exceed 1")
        if self.beta_exp < 1.0:
            raise ValueError("beta_exp must be at least 1")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.iterations < 1 or self.step_size <= 0:
            raise ValueError("iterations and step_size must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")


def range_penalty(image, alpha):
    """(sum |I|^alpha, its gradient)."""
    a = np.abs(image)
    val = float(np.sum(a ** alpha))
    grad = alpha * np.sign(image) * a ** (alpha - 1.0)
    return val, grad


def tv_penalty(image, beta, eps=1e-12):
    """(sum (|grad I|^2)^(beta/2), its gradient).

    Forward differences per channel, zero-padded at the bottom and right
    borders, so constant images score exactly zero.
    """
    img = np.asarray(image, dtype=np.float64)
    dy = np.zeros_like(img)
    dx = np.zeros_like(img)
    dy[:, :-1, :] = img[:, 1:, :] - img[:, :-1, :]
    dx[:, :, :-1] = img[:, :, 1:] - img[:, :, :-1]
    g2 = dy * dy + dx * dx
    val = float(np.sum(g2 ** (beta / 2.0)))
    if beta == 2.0:
        w = np.ones_like(g2)
    else:
        w = (g2 + eps) ** (beta / 2.0 - 1.0)
    wy = beta * w * dy
    wx = beta * w * dx
    grad = -(wy + wx)
    grad[:, 1:, :] += wy[:, :-1, :]
    grad[:, :, 1:] += wx[:, :, :-1]
    return val, grad


def invert_representation(net, target_rep, config, trajectory=None):
    """Reconstruct an image whose layer representation matches target_rep.

    Returns the reconstruction scaled back to pixel units and clipped to
    [0, 255].  If ``trajectory`` is a list, (iteration, objective) pairs are
    appended to it.
    """
    target = np.asarray(target_rep, dtype=np.float64).ravel()
    t2 = float(target @ target)
    if t2 == 0.0:
        raise DegenerateInputError("target representation has zero norm")
    shape = net.spec.input_shape
    sigma = config.sigma
    if sigma is None:
        sigma = 255.0 * np.sqrt(float(np.prod(shape)))

    def objective(x):
        dist2, dgrad = N.feature_distance_grad(net, sigma * x, config.layer,
                                               target, check_range=False)
        f = dist2 / t2
        g = (sigma / t2) * dgrad
        if config.lambda_alpha > 0:
            v, gv = range_penalty(x, config.alpha_exp)
            f += config.lambda_alpha * v
            g += config.lambda_alpha * gv
        if config.lambda_tv > 0:
            v, gv = tv_penalty(x, config.beta_exp)
            f += config.lambda_tv * v
            g += config.lambda_tv * gv
        return f, g

    rng = np.random.Generator(np.random.Philox(
        key=np.array([np.uint64(config.seed & 0xFFFFFFFFFFFFFFFF), np.uint64(0)])))
    x = np.full(shape, 127.5 / sigma) + rng.normal(scale=1e-3, size=shape)

    f, g = objective(x)
    if trajectory is not None:
        trajectory.append((0, f))
    velocity = np.zeros_like(x)
    step = config.step_size
    for it in range(1, config.iterations + 1):
        while step > MIN_STEP:
            v_trial = config.momentum * velocity - step * g
            f_trial, g_trial = objective(x + v_trial)
            if f_trial <= f:
                break
            step *= 0.5
            velocity = np.zeros_like(x)
        else:
            break
        velocity = v_trial
        x = x + velocity
        f, g = f_trial, g_trial
        step = min(step * STEP_GROWTH, config.step_size)
        if trajectory is not None:
            trajectory.append((it, f))
    return np.clip(sigma * x, 0.0, 255.0)
