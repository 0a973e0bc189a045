"""Conditioned diffusion over atlases, with pluggable noise predictors.

The forward process is variance preserving, ``x_t = alpha_t x + sigma_t eps``
with ``alpha_t^2 + sigma_t^2 = 1``. The denoiser sees the noisy atlas plus
the incomplete atlas (a plain channelwise sum) and predicts ``eps``. Sampling
is deterministic DDIM over evenly spaced timesteps.

No network lives here: :class:`OracleDenoiser` inverts the forward process
analytically (to check the sampler algebra) and :func:`inpaint_nearest` is a
non-learned fill that keeps the full pipeline runnable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .atlas import Atlas
from .errors import ConsistencyError, EmptyInputError, NumericalDivergenceError
from .seeding import make_rng

DEFAULT_T_MAX = 1000
DEFAULT_STEPS = 20
COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """``alpha[t]`` and ``sigma[t]`` for t = 0..t_max."""

    alpha: np.ndarray
    sigma: np.ndarray

    @property
    def t_max(self) -> int:
        return len(self.alpha) - 1


def build_schedule(t_max: int = DEFAULT_T_MAX, kind: str = "cosine") -> NoiseSchedule:
    """Cosine schedule with per-step betas clipped at 0.999.

    ``alpha_bar`` is the running product of ``1 - beta_t``, with
    ``beta_t = 1 - f(t)/f(t-1)`` and ``f(t) = cos^2(pi/2 (t/T + s)/(1 + s))``.
    Clipping keeps ``alpha[t_max]`` tiny but nonzero (about 5e-5 at T=1000).
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    if kind != "cosine":
        raise ValueError(f"unknown schedule kind {kind!r}")
    t = np.arange(t_max + 1, dtype=np.float64)
    f = np.cos(0.5 * math.pi * (t / t_max + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) ** 2
    beta = np.minimum(1.0 - f[1:] / f[:-1], MAX_BETA)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    alpha = np.sqrt(alpha_bar)
    sigma = np.sqrt(1.0 - alpha_bar)
    for a in (alpha, sigma):
        a.flags.writeable = False
    return NoiseSchedule(alpha, sigma)


class Denoiser(Protocol):
    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        """Predict the noise in ``x`` (already conditioned) at timestep ``t``."""


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = DEFAULT_STEPS
    schedule: NoiseSchedule = None
    seed: int = 0

    def __post_init__(self):
        if self.schedule is None:
            object.__setattr__(self, "schedule", build_schedule())
        if not 1 <= self.steps <= self.schedule.t_max:
            raise ValueError(f"steps must lie in [1, {self.schedule.t_max}], got {self.steps}")


def _channels(x):
    return x.channels if isinstance(x, Atlas) else np.asarray(x, dtype=np.float64)


def _check_shapes(a, b, what):
    if a.shape != b.shape:
        raise ConsistencyError(f"{what}: shape {a.shape} does not match {b.shape}")


def forward_noise(x: Atlas, t: int, eps, schedule: NoiseSchedule) -> Atlas:
    """``alpha_t x + sigma_t eps`` on all six channels; the mask is carried over."""
    eps = _channels(eps)
    _check_shapes(x.channels, eps, "forward_noise")
    return x.replace(channels=schedule.alpha[t] * x.channels + schedule.sigma[t] * eps)


def condition(x_t: Atlas, x_hat: Atlas) -> Atlas:
    """Channelwise sum of the noisy atlas and the incomplete atlas.

    Hole pixels of ``x_hat`` are zero, so they leave ``x_t`` untouched.
    """
    _check_shapes(x_t.channels, x_hat.channels, "condition")
    return x_t.replace(channels=x_t.channels + x_hat.channels)


def training_loss(denoiser: Denoiser, x: Atlas, x_hat: Atlas, t: int, eps, schedule: NoiseSchedule) -> float:
    """Mean squared error between ``eps`` and the denoiser's prediction."""
    eps = _channels(eps)
    z = condition(forward_noise(x, t, eps, schedule), x_hat)
    pred = np.asarray(denoiser(z.channels, t), dtype=np.float64)
    _check_shapes(pred, eps, "denoiser output")
    return float(np.mean((eps - pred) ** 2))


def sampling_timesteps(t_max: int, steps: int) -> np.ndarray:
    """``steps + 1`` strictly decreasing timesteps from t_max to 0."""
    return np.round(np.linspace(t_max, 0, steps + 1)).astype(np.int64)


def sample(denoiser: Denoiser, x_hat: Atlas, cfg: SamplerConfig, callback: Callable = None) -> Atlas:
    """Deterministic DDIM inpainting conditioned on ``x_hat``.

    Starts from seeded standard normal noise at ``t_max``. Each step queries
    the denoiser on ``x_t + x_hat``, forms the clean estimate
    ``x0 = (x_t - sigma_t eps) / alpha_t`` and moves to
    ``alpha_s x0 + sigma_s eps`` at the next timestep. Returns the last clean
    estimate as a fully valid atlas.

    Raises:
        NumericalDivergenceError: a non-finite value appeared.
    """
    sched = cfg.schedule
    cond = x_hat.channels
    x_t = make_rng(cfg.seed).standard_normal(cond.shape)
    ts = sampling_timesteps(sched.t_max, cfg.steps)
    x0 = x_t
    for k in range(cfg.steps):
        t, s = int(ts[k]), int(ts[k + 1])
        eps = np.asarray(denoiser(x_t + cond, t), dtype=np.float64)
        _check_shapes(eps, cond, "denoiser output")
        x0 = (x_t - sched.sigma[t] * eps) / sched.alpha[t]
        x_t = sched.alpha[s] * x0 + sched.sigma[s] * eps
        if not (np.isfinite(x0).all() and np.isfinite(x_t).all()):
            raise NumericalDivergenceError(f"non-finite values at sampling step {k} (t={t})", step=k)
        if callback is not None:
            callback(k, t, x0)
    return Atlas(x0, np.ones(cond.shape[:2], dtype=bool))


class OracleDenoiser:
    """Returns the exact noise that separates ``x_t`` from a known target.

    It undoes the conditioning sum itself, so
    ``eps = (input - x_hat - alpha_t * target) / sigma_t``.
    """

    def __init__(self, target: Atlas, x_hat: Atlas, schedule: NoiseSchedule):
        _check_shapes(target.channels, x_hat.channels, "oracle")
        self.target = target.channels
        self.x_hat = x_hat.channels
        self.schedule = schedule

    def __call__(self, x, t):
        s = self.schedule.sigma[t]
        if s == 0:
            return np.zeros_like(self.target)
        return (x - self.x_hat - self.schedule.alpha[t] * self.target) / s


def zero_denoiser(x, t):
    return np.zeros_like(x)


def inpaint_nearest(x_hat: Atlas) -> Atlas:
    """Fill every hole with the values of its nearest valid pixel.

    Distance is breadth-first over 4-neighborhoods (Manhattan on the grid);
    among equally near valid pixels the lowest row-major index wins.

    Raises:
        EmptyInputError: the atlas has no valid pixel.
    """
    mask = x_hat.mask
    if not mask.any():
        raise EmptyInputError("cannot inpaint an atlas without valid pixels")
    side = x_hat.side
    big = np.iinfo(np.int64).max
    label = np.where(mask, np.arange(side * side).reshape(side, side), big)
    done = mask.copy()
    frontier = mask.copy()
    while not done.all():
        # Each newly reached pixel takes the smallest label among its reached neighbors.
        cand = np.full((side, side), big)
        lab_f = np.where(frontier, label, big)
        cand[1:, :] = np.minimum(cand[1:, :], lab_f[:-1, :])
        cand[:-1, :] = np.minimum(cand[:-1, :], lab_f[1:, :])
        cand[:, 1:] = np.minimum(cand[:, 1:], lab_f[:, :-1])
        cand[:, :-1] = np.minimum(cand[:, :-1], lab_f[:, 1:])
        new = ~done & (cand < big)
        label[new] = cand[new]
        done |= new
        frontier = new
    flat = x_hat.channels.reshape(-1, x_hat.channels.shape[2])
    filled = flat[label.ravel()].reshape(x_hat.channels.shape)
    return Atlas(filled, np.ones_like(mask))
