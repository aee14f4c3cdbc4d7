"""Noise schedule and samplers for the inpainting engine.

One training-time scheme (variance-preserving forward noising with
ancestral reverse steps) and one deterministic inference-time scheme
behind the same step interface. Both operate on channels-last latents.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseSchedule:
    n_timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.n_timesteps < 1:
            raise ValueError("n_timesteps must be >= 1")
        self.betas = np.linspace(self.beta_start, self.beta_end, self.n_timesteps)
        alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(alphas)

    def q_sample(self, x0: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
        """Forward-noise x0 to timestep t."""
        ab = self.alpha_bars[t]
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise

    def predict_x0(self, z_t: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
        ab = self.alpha_bars[t]
        return (z_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


class DdimSampler:
    """Deterministic reverse steps (eta = 0); the inference-time scheme."""

    scheme = "inference_scheme"

    def __init__(self, schedule: NoiseSchedule, steps: int):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        self.schedule = schedule
        grid = np.linspace(0, schedule.n_timesteps - 1, steps).round().astype(int)
        self.timesteps = list(dict.fromkeys(int(t) for t in grid[::-1]))

    def step(self, z_t: np.ndarray, eps: np.ndarray, t: int, t_prev: int,
             rng: np.random.Generator | None = None) -> np.ndarray:
        x0 = self.schedule.predict_x0(z_t, t, eps)
        ab_prev = self.schedule.alpha_bars[t_prev] if t_prev >= 0 else 1.0
        return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps


class DdpmSampler:
    """Stochastic ancestral reverse steps; the training-time scheme."""

    scheme = "training_scheme"

    def __init__(self, schedule: NoiseSchedule, steps: int | None = None):
        self.schedule = schedule
        steps = steps or schedule.n_timesteps
        grid = np.linspace(0, schedule.n_timesteps - 1, steps).round().astype(int)
        self.timesteps = list(dict.fromkeys(int(t) for t in grid[::-1]))

    def step(self, z_t: np.ndarray, eps: np.ndarray, t: int, t_prev: int,
             rng: np.random.Generator | None = None) -> np.ndarray:
        x0 = self.schedule.predict_x0(z_t, t, eps)
        ab_prev = self.schedule.alpha_bars[t_prev] if t_prev >= 0 else 1.0
        ab_t = self.schedule.alpha_bars[t]
        # DDIM family with eta=1: ancestral-style variance
        var = (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)
        var = max(float(var), 0.0)
        sigma = np.sqrt(var)
        dir_coeff = np.sqrt(max(1.0 - ab_prev - var, 0.0))
        noise = rng.standard_normal(z_t.shape) if (rng is not None and t_prev >= 0) else 0.0
        return np.sqrt(ab_prev) * x0 + dir_coeff * eps + sigma * noise


def make_sampler(scheme: str, schedule: NoiseSchedule, steps: int):
    if scheme == "inference_scheme":
        return DdimSampler(schedule, steps)
    if scheme == "training_scheme":
        return DdpmSampler(schedule, steps)
    raise ValueError(f"unknown sampler scheme {scheme!r}")
