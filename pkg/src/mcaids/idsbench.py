"""Benchmark detectors and the sensor (alarm) model they sit behind."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError

INTRUSION = "intrusion"
BENIGN = "benign"


@dataclass(frozen=True)
class EBlockModel:
    """Alarm sensor with its nominal rates and how far an adversary can bend them.

    ``delta_frac`` scales the attack-rate deviation with ``p0_hat``.
    """

    p_D: float = 0.9
    p_FA: float = 0.1
    p0_hat: float = 0.25
    delta_frac: float = 0.1
    beta: float = 0.2
    alpha: float = 0.1

    def __post_init__(self):
        for name in ("p_D", "p_FA", "p0_hat", "delta_frac", "beta", "alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name}={v} outside [0, 1]")

    @property
    def delta_adv(self) -> float:
        return self.delta_frac * self.p0_hat

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BayesVerdict:
    posterior: float
    threshold: float
    label: str


def ids1_label(alarm: bool) -> str:
    return INTRUSION if alarm else BENIGN


def bayes_posterior(model: EBlockModel) -> float:
    """P(intrusion | alarm) from the detection, false-alarm and prior attack rates."""
    p_d, p_fa, p0 = model.p_D, model.p_FA, model.p0_hat
    denom = (p_d - p_fa) * p0 + p_fa
    if denom <= 0:
        raise ContractError("posterior undefined: alarm has zero probability")
    return p_d * p0 / denom


def ids2_label(alarm: bool, model: EBlockModel, threshold: float = 0.5) -> BayesVerdict:
    post = bayes_posterior(model)
    label = INTRUSION if alarm and post >= threshold else BENIGN
    return BayesVerdict(post, threshold, label)


def adversary_rates(model: EBlockModel, rng: np.random.Generator) -> tuple[float, float, float]:
    """Per-event (attack, zero-day, forced false alarm) probabilities, each drawn uniformly."""
    lo = max(0.0, model.p0_hat - model.delta_adv)
    hi = min(1.0, model.p0_hat + model.delta_adv)
    u = rng.random(3)
    return lo + (hi - lo) * u[0], model.beta * u[1], model.alpha * u[2]
