"""Deterministic reverse-time (DDIM-style) sampling from an early start time.

A run begins at start time M on a uniform (K+1)-point grid down to 0 and
repeatedly applies

    x_next = alpha_next x0_hat + (sigma_next / sigma_cur) (x_cur - alpha_cur x0_hat)

with x0_hat supplied by any denoiser exposing predict_x0.  The initial
state is either the conventional prior (N(0, I) for vp, N(0, sigma_M^2 I)
for ve) or an explicit isotropic Gaussian fitted to the time-M marginal.
Initial draws are formed by affine-mapping one shared standard-normal
tensor, so runs that differ only in the init distribution are paired
sample-by-sample under a shared seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic_init import InitDistribution
from .schedule import NoiseSchedule, VP, alpha_sigma

STANDARD = "standard"
ANALYTIC = "analytic"


class SamplerDiverged(RuntimeError):
    """Raised when a reverse chain leaves the finite range."""

    def __init__(self, step: int, t: float):
        super().__init__(f"non-finite sampler state at step {step} (t={t:g})")
        self.step = step


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    """Reverse-run settings: start time M, step count K, init, condition mode.

    init=None selects the conventional start; an InitDistribution selects
    the fitted Gaussian (its M must match start_time).  inference_beta=None
    passes the conditioning frame through clean; a float adds that fixed
    noise level once per chain.
    """

    start_time: float = 1.0
    steps: int = 50
    init: InitDistribution | None = None
    inference_beta: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.start_time <= 1.0:
            raise ValueError("start_time must lie in (0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.init is not None and self.init.M != self.start_time:
            raise ValueError("init distribution was fitted at a different start time")
        if self.inference_beta is not None and self.inference_beta < 0.0:
            raise ValueError("inference_beta must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "start_time": float(self.start_time),
            "steps": int(self.steps),
            "init": None if self.init is None else self.init.to_dict(),
            "inference_beta": (
                None if self.inference_beta is None else float(self.inference_beta)
            ),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SamplerConfig":
        init = payload.get("init")
        return cls(
            start_time=float(payload["start_time"]),
            steps=int(payload["steps"]),
            init=None if init is None else InitDistribution.from_dict(init),
            inference_beta=(
                None
                if payload.get("inference_beta") is None
                else float(payload["inference_beta"])
            ),
        )


def time_grid(start_time: float, steps: int):
    """Uniform grid from M down to exactly 0, steps+1 points."""
    return np.linspace(start_time, 0.0, steps + 1)


def draw_initial(config: SamplerConfig, schedule: NoiseSchedule, shape, rng):
    """Draw the start state by affine-mapping one standard-normal tensor."""
    z = rng.standard_normal(shape)
    if config.init is None:
        if schedule.kind == VP:
            return z
        _, sigma = alpha_sigma(schedule, config.start_time)
        return sigma * z
    init = config.init
    n_frames_times_d = int(np.prod(shape[-2:]))
    if init.mu_p.size != n_frames_times_d:
        raise ValueError("init distribution dimension does not match video shape")
    mu = init.mu_p.reshape(shape[-2:])
    return mu + np.sqrt(init.sigma_p2) * z


def ddim_step(denoiser, xt, y, t_from, t_to, schedule: NoiseSchedule):
    """One deterministic update from t_from down to t_to."""
    if not 0.0 <= t_to <= t_from <= 1.0:
        raise ValueError("need 0 <= t_to <= t_from <= 1")
    x0_hat = denoiser.predict_x0(xt, y, t_from)
    if t_to == 0.0:
        return x0_hat
    a_from, s_from = alpha_sigma(schedule, t_from)
    a_to, s_to = alpha_sigma(schedule, t_to)
    return a_to * x0_hat + (s_to / s_from) * (np.asarray(xt) - a_from * x0_hat)


def _video_shape(denoiser):
    world = getattr(denoiser, "world", None)
    if world is not None:
        return world.n_frames, world.frame_dim
    model = getattr(denoiser, "model", None)
    if model is not None:
        return model.n_frames, model.frame_dim
    raise ValueError("cannot infer video shape from this denoiser")


def sample_batch(denoiser, y0, config: SamplerConfig, schedule, n: int, rng):
    """Run n reverse chains; returns generated videos of shape (n, N, d).

    y0 may be one frame (shared by all chains) or a batch of n frames.
    """
    n_frames, frame_dim = _video_shape(denoiser)
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.ndim == 2 and y0.shape[0] != n:
        raise ValueError("per-chain conditions must match the chain count")
    x = draw_initial(config, schedule, (n, n_frames, frame_dim), rng)
    if config.inference_beta is None or config.inference_beta == 0.0:
        y = y0
    else:
        eps_shape = y0.shape if y0.ndim == 2 else (n,) + y0.shape
        y = y0 + config.inference_beta * rng.standard_normal(eps_shape)
    grid = time_grid(config.start_time, config.steps)
    for step, (t_from, t_to) in enumerate(zip(grid[:-1], grid[1:])):
        x = ddim_step(denoiser, x, y, float(t_from), float(t_to), schedule)
        if not np.all(np.isfinite(x)):
            raise SamplerDiverged(step, float(t_to))
    return x


def sample(denoiser, y0, config: SamplerConfig, schedule, rng):
    """Single reverse chain; returns one (N, d) video."""
    return sample_batch(denoiser, y0, config, schedule, 1, rng)[0]
