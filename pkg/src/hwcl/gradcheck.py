"""Central finite differences and the gradient checks behind ``hwcl grad-check``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .encoder import PolicyState, TrainConfig, batch_loss, compute_gradients
from .losses import LossConfig, RewardSpec, hardness_weighted, infonce

FD_STEP = 1e-6
LOSS_TOLERANCE = 1e-4
ENCODER_TOLERANCE = 1e-3


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f(x)
        flat[j] = orig - h
        fm = f(x)
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest entrywise difference relative to the larger of the two gradients' max-norms."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-300)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def loss_fd_errors(s: np.ndarray, positives: np.ndarray, config: LossConfig, h: float = FD_STEP) -> dict:
    """FD errors for one similarity grid.

    ``frozen`` perturbs similarities with the reward held at its original
    value; ``recomputed`` lets the reward follow the perturbed similarities,
    which a stop-gradient loss must NOT agree with when alpha > 0.
    """
    if config.variant == "infonce":
        res = infonce(s, positives, config)
        num = central_difference(lambda x: infonce(x, positives, config).loss, s, h)
        err = max_relative_error(res.grad_wrt_sim, num)
        return {"frozen": err, "recomputed": err}
    res = hardness_weighted(s, positives, config)
    frozen = RewardSpec.external(res.reward_matrix)
    num_frozen = central_difference(lambda x: hardness_weighted(x, positives, config, frozen).loss, s, h)
    num_live = central_difference(lambda x: hardness_weighted(x, positives, config).loss, s, h)
    return {
        "frozen": max_relative_error(res.grad_wrt_sim, num_frozen),
        "recomputed": max_relative_error(res.grad_wrt_sim, num_live),
    }


def encoder_fd_error(state: PolicyState, qx, tx, config: TrainConfig, h: float = FD_STEP) -> float:
    """End-to-end parameter-gradient check with the reward frozen at the base point."""
    grads, base = compute_gradients(state, qx, tx, config)
    frozen = RewardSpec.external(base.reward_matrix)
    analytic = [np.concatenate([grads["query"][n].ravel() for n in ("W1", "b1", "W2", "b2")])]
    if not state.shared:
        analytic.append(np.concatenate([grads["target"][n].ravel() for n in ("W1", "b1", "W2", "b2")]))
    analytic = np.concatenate(analytic)
    num = central_difference(lambda v: batch_loss(state.with_flat(v), qx, tx, config, frozen).loss, state.flat(), h)
    return max_relative_error(analytic, num)


@dataclass
class GradCheckSummary:
    loss_frozen: float
    loss_recomputed_min: float
    encoder: float
    n_instances: int

    @property
    def passed(self) -> bool:
        return (
            self.loss_frozen < LOSS_TOLERANCE
            and self.loss_recomputed_min > 10 * LOSS_TOLERANCE
            and self.encoder < ENCODER_TOLERANCE
        )


def run_grad_check(seed: int, n_instances: int = 20) -> GradCheckSummary:
    """Random similarity grids through both losses, then one toy-encoder batch."""
    rng = np.random.default_rng(seed)
    worst_frozen, min_live = 0.0, np.inf
    for _ in range(n_instances):
        n, m = rng.integers(4, 13, size=2)
        m = max(m, n)
        s = rng.uniform(-1, 1, size=(n, m))
        pos = rng.integers(0, m, size=n)
        for cfg in (LossConfig.infonce(), LossConfig(alpha=float(rng.choice([3.0, 9.0])))):
            errs = loss_fd_errors(s, pos, cfg)
            worst_frozen = max(worst_frozen, errs["frozen"])
            if cfg.variant == "hardness_weighted":
                min_live = min(min_live, errs["recomputed"])
    config = TrainConfig(seed=seed, d_hidden=8, d_emb=4, batch_size=6, shards=2)
    state = PolicyState.init(6, config)
    qx, tx = rng.standard_normal((6, 6)), rng.standard_normal((6, 6))
    enc = encoder_fd_error(state, qx, tx, config)
    return GradCheckSummary(worst_frozen, float(min_live), enc, n_instances)
