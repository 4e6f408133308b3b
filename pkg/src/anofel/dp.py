"""Gaussian-mechanism calibration for noised model updates.

Each client clips its gradient to L2 norm ``clip``, computes sensitivity
``2 * clip / |D_i|`` and samples Gaussian noise with standard deviation
``c * T * S_f / epsilon`` where ``c = sqrt(2 ln(1.25 / delta))``.  Because
updates are only ever decrypted as a sum, every client scales its share of
the noise down by the announced participant count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import BadParams


@dataclass(frozen=True)
class DPParams:
    epsilon: float
    delta: float
    clip: float
    dataset_size: int = 1
    exposures: int = 1
    rounds: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise BadParams(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise BadParams(f"delta must lie in (0, 1), got {self.delta}")
        if not self.clip > 0:
            raise BadParams(f"clip must be positive, got {self.clip}")
        if self.dataset_size < 1:
            raise BadParams("dataset_size must be at least 1")
        if self.exposures < 1 or self.rounds < 1:
            raise BadParams("exposures and rounds must be at least 1")
        if self.epsilon >= 1:
            warnings.warn(
                f"epsilon={self.epsilon} >= 1: the Gaussian mechanism bound is only stated for epsilon < 1",
                stacklevel=3,
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NoiseScale:
    sensitivity: float
    c_factor: float
    sigma: float


def sensitivity(clip: float, dataset_size: int) -> float:
    if dataset_size < 1:
        raise BadParams("dataset_size must be at least 1")
    if not clip > 0:
        raise BadParams("clip must be positive")
    return 2.0 * clip / dataset_size


def c_factor(delta: float) -> float:
    if not 0 < delta < 1:
        raise BadParams(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta))


def noise_sigma(params: DPParams) -> NoiseScale:
    """Noise scale taken at equality in both lower bounds."""
    s_f = sensitivity(params.clip, params.dataset_size)
    c = c_factor(params.delta)
    return NoiseScale(s_f, c, c * params.exposures * s_f / params.epsilon)


def clip(gradient, bound: float) -> np.ndarray:
    g = np.asarray(gradient, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm <= bound:
        return g.copy()
    return g * (bound / norm)


def clip_rows(rows: np.ndarray, bound: float) -> np.ndarray:
    """Clip each row (one per-example gradient) to L2 norm ``bound``."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    factors = np.minimum(1.0, bound / np.maximum(norms, np.finfo(np.float64).tiny))
    return rows * factors


def sample_noise(scale: NoiseScale, dims: int, n_active: int, rng: np.random.Generator) -> np.ndarray:
    if n_active < 1:
        raise BadParams("n_active must be at least 1")
    return rng.normal(0.0, scale.sigma / n_active, size=dims)


def gamma_bound(epsilon: float, delta: float) -> float:
    """Cap on a membership adversary's advantage under (epsilon, delta)-DP."""
    return (1.0 - math.exp(-epsilon) + 2.0 * delta) / (math.exp(epsilon) + 1.0)


def alpha_bound(s_f: float, k: int, delta: float, epsilon: float, constant: float = 1.0) -> float:
    """Accuracy-loss bound ``constant * R * sqrt(log k)``.

    The bound is asymptotic, so ``constant`` is a reporting knob.  ``log k``
    is floored at 1 so that one- and two-round runs still report a scale.
    """
    if k < 1:
        raise BadParams("k must be at least 1")
    r = s_f * math.sqrt(k * math.log(1.0 / delta)) / epsilon
    return constant * r * math.sqrt(max(math.log(k), 1.0))


def describe(params: DPParams, alpha_constant: float = 1.0) -> dict:
    """All derived quantities for one parameter set, as reported by ``dp calc``."""
    scale = noise_sigma(params)
    return {
        "epsilon": params.epsilon,
        "delta": params.delta,
        "clip": params.clip,
        "dataset_size": params.dataset_size,
        "exposures": params.exposures,
        "rounds": params.rounds,
        "sensitivity": scale.sensitivity,
        "c": scale.c_factor,
        "sigma": scale.sigma,
        "gamma": gamma_bound(params.epsilon, params.delta),
        "alpha": alpha_bound(scale.sensitivity, params.rounds, params.delta, params.epsilon, alpha_constant),
        "alpha_constant": alpha_constant,
    }
