"""Contrastive objectives with analytic gradients.

Every loss here is a row-wise weighted softmax cross-entropy over the
temperature-scaled similarity grid::

    logit[i, j] = s[i, j] / tau + r[i, j]          (r[i, p(i)] = 0)
    loss_i      = logsumexp(logit[i, :]) - s[i, p(i)] / tau

InfoNCE is the case r = 0. The hardness-weighted loss uses a reward
``r = alpha * sg(s)`` on the negatives, where ``sg`` means the reward is a
constant for differentiation: ``grad_wrt_sim`` never contains d r / d s.
Subtracting the row maximum inside ``logsumexp`` keeps exponents bounded
(``s / tau`` alone reaches 50 at tau = 0.02).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import SimilarityMatrix, as_values, check_positives
from .errors import (
    InvalidTemperature,
    RewardShapeMismatch,
    ShapeMismatch,
    ValidationError,
    WrongVariant,
)

VARIANTS = ("infonce", "hardness_weighted", "bt_pairwise")
DEFAULT_TAU = 0.02
DEFAULT_ALPHA = 9.0


@dataclass(frozen=True)
class LossConfig:
    tau: float = DEFAULT_TAU
    alpha: float = DEFAULT_ALPHA
    variant: str = "hardness_weighted"

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise InvalidTemperature(f"tau must be > 0, got {self.tau}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")

    @classmethod
    def infonce(cls, tau: float = DEFAULT_TAU) -> "LossConfig":
        return cls(tau=tau, alpha=0.0, variant="infonce")

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        variant = d.get("variant", "hardness_weighted")
        alpha = d.get("alpha", DEFAULT_ALPHA if variant == "hardness_weighted" else 0.0)
        return cls(tau=float(d.get("tau", DEFAULT_TAU)), alpha=float(alpha), variant=variant)

    def to_dict(self) -> dict:
        return {"tau": self.tau, "alpha": self.alpha, "variant": self.variant}

    @property
    def label(self) -> str:
        if self.variant == "hardness_weighted":
            return f"hardness_weighted(alpha={self.alpha:g})"
        return self.variant


@dataclass(frozen=True)
class RewardSpec:
    """Where the per-negative hardness reward comes from.

    ``self_similarity`` gives ``alpha * sg(s)``, i.e. the reward model is the
    policy itself. ``external`` takes a caller-supplied N x M matrix (a
    separate hardness estimator, or manual annotation). ``zero`` disables
    weighting. Whatever the kind, positive cells get reward 0.
    """

    kind: str = "self_similarity"
    external_values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("self_similarity", "external", "zero"):
            raise ValidationError(f"unknown reward kind {self.kind!r}")
        if (self.kind == "external") != (self.external_values is not None):
            raise ValidationError("external_values must be given exactly when kind='external'")
        if self.external_values is not None:
            vals = np.asarray(self.external_values, dtype=np.float64)
            if vals.ndim != 2:
                raise RewardShapeMismatch("external reward must be a 2-D matrix")
            if not np.all(np.isfinite(vals)):
                raise ValidationError("external reward entries must be finite")
            object.__setattr__(self, "external_values", vals)

    @classmethod
    def external(cls, values) -> "RewardSpec":
        return cls(kind="external", external_values=values)

    @classmethod
    def zero(cls) -> "RewardSpec":
        return cls(kind="zero")

    def matrix(self, s: np.ndarray, positives: np.ndarray, alpha: float) -> np.ndarray:
        """The reward grid actually used, with positive cells zeroed."""
        if self.kind == "self_similarity":
            # copy: the reward is a detached constant, never a view of s
            r = alpha * np.array(s, dtype=np.float64, copy=True)
        elif self.kind == "external":
            if self.external_values.shape != s.shape:
                raise RewardShapeMismatch(
                    f"external reward shape {self.external_values.shape} != similarity shape {s.shape}"
                )
            r = self.external_values.copy()
        else:
            r = np.zeros_like(s)
        r[np.arange(s.shape[0]), positives] = 0.0
        return r

    def rows(self, start: int, stop: int) -> "RewardSpec":
        """Restrict an external reward to a row slice; other kinds are row-independent."""
        if self.kind != "external":
            return self
        return RewardSpec.external(self.external_values[start:stop])


@dataclass(frozen=True)
class LossResult:
    """Output of a loss evaluation.

    ``normalizers`` holds log Z_i. ``grad_wrt_sim`` is the gradient of the
    mean loss with respect to the similarities. ``probabilities`` is the
    weighted softmax ``exp(logit - log Z)`` from which the gradient is built.
    """

    loss: float
    per_row_loss: np.ndarray
    normalizers: np.ndarray
    grad_wrt_sim: np.ndarray
    reward_matrix: np.ndarray
    positives: np.ndarray
    tau: float
    variant: str
    logits: np.ndarray = field(repr=False)
    probabilities: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return self.per_row_loss.shape[0]


def weighted_softmax_rows(s: np.ndarray, positives: np.ndarray, tau: float, reward: np.ndarray):
    """Row-local kernel shared by every loss: returns (per_row_loss, log Z, probabilities, logits).

    No quantity depends on rows other than its own, which is what makes the
    cross-device split exact.
    """
    rows = np.arange(s.shape[0])
    policy = s / tau
    logits = policy + reward
    top = logits.max(axis=1)
    shifted = logits - top[:, None]
    # sum(exp(shifted)) - 1, with the positive's term taken through expm1 so a
    # dominant positive (shifted == 0) keeps the tiny negative mass exactly
    terms = np.exp(shifted)
    terms[rows, positives] = np.expm1(shifted[rows, positives])
    excess = terms.sum(axis=1)
    log_mass = np.log1p(excess)
    log_z = top + log_mass
    per_row = (top - policy[rows, positives]) + log_mass
    # log Z >= the positive logit, so this only clips rounding noise
    per_row = np.maximum(per_row, 0.0)
    probs = np.exp(logits - log_z[:, None])
    return per_row, log_z, probs, logits


def gradient_from_probabilities(probs: np.ndarray, positives: np.ndarray, tau: float, n_total: int) -> np.ndarray:
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), positives] -= 1.0
    return grad / (tau * n_total)


def _prepare(sim, positives, config: LossConfig):
    s = as_values(sim)
    pos = check_positives(positives, s.shape[1])
    if pos.shape[0] != s.shape[0]:
        raise ShapeMismatch(f"{pos.shape[0]} positives for {s.shape[0]} rows")
    if not (math.isfinite(config.tau) and config.tau > 0):
        raise InvalidTemperature(f"tau must be > 0, got {config.tau}")
    return s, pos


def _evaluate(s, pos, tau, reward, variant) -> LossResult:
    per_row, log_z, probs, logits = weighted_softmax_rows(s, pos, tau, reward)
    return LossResult(
        loss=float(per_row.mean()),
        per_row_loss=per_row,
        normalizers=log_z,
        grad_wrt_sim=gradient_from_probabilities(probs, pos, tau, s.shape[0]),
        reward_matrix=reward,
        positives=pos,
        tau=tau,
        variant=variant,
        logits=logits,
        probabilities=probs,
    )


def infonce(sim: SimilarityMatrix | np.ndarray, positives, config: LossConfig | None = None) -> LossResult:
    """Standard InfoNCE, averaged over rows."""
    config = config or LossConfig.infonce()
    s, pos = _prepare(sim, positives, config)
    return _evaluate(s, pos, config.tau, np.zeros_like(s), "infonce")


def hardness_weighted(
    sim: SimilarityMatrix | np.ndarray,
    positives,
    config: LossConfig | None = None,
    reward: RewardSpec | None = None,
) -> LossResult:
    """Contrastive loss with each negative weighted by ``exp(reward)``.

    The reward is evaluated once from the incoming similarities and then
    held fixed, so ``grad_wrt_sim`` treats it as a constant.
    """
    config = config or LossConfig()
    reward = reward or RewardSpec()
    s, pos = _prepare(sim, positives, config)
    r = reward.matrix(s, pos, config.alpha)
    return _evaluate(s, pos, config.tau, r, "hardness_weighted")


def evaluate_loss(sim, positives, config: LossConfig, reward: RewardSpec | None = None) -> LossResult:
    """Dispatch on ``config.variant``."""
    if config.variant == "infonce":
        return infonce(sim, positives, config)
    if config.variant == "hardness_weighted":
        return hardness_weighted(sim, positives, config, reward)
    # bt_pairwise over a grid is the one-to-N form with rewards s / tau
    return bt_one_to_n(as_values(sim) / config.tau, positives)


def bt_pairwise(r1: float, r2: float) -> float:
    """Bradley-Terry loss for preferring the item scored ``r1`` over ``r2``.

    Equals ``softplus(r2 - r1)``; evaluated through ``logaddexp`` so neither
    argument can overflow.
    """
    if not (math.isfinite(r1) and math.isfinite(r2)):
        raise ValidationError("Bradley-Terry rewards must be finite")
    return float(np.logaddexp(0.0, r2 - r1))


def bt_one_to_n(rewards, positives) -> LossResult:
    """Bradley-Terry generalized to one preferred item among N candidates.

    ``rewards`` are already-scaled policy scores; the result is InfoNCE
    with unit temperature on them.
    """
    r = as_values(rewards)
    pos = check_positives(positives, r.shape[1])
    return _evaluate(r, pos, 1.0, np.zeros_like(r), "bt_pairwise")


@dataclass(frozen=True)
class GradientFactors:
    """Per-negative factors of the hardness-weighted gradient.

    For every negative cell, ``reward_weight * policy_share / (tau * N)``
    equals the similarity gradient. Positive cells are NaN.
    """

    reward_weight: np.ndarray
    policy_share: np.ndarray
    scale: float

    def reconstruct(self) -> np.ndarray:
        return self.reward_weight * self.policy_share * self.scale


def loss_gradient_decomposition(result: LossResult) -> GradientFactors:
    """Split each negative gradient into ``exp(r_theta)`` and ``exp(r_pi) / Z_i``."""
    if result.variant != "hardness_weighted":
        raise WrongVariant(f"decomposition needs a hardness_weighted result, got {result.variant!r}")
    policy = result.logits - result.reward_matrix
    weight = np.exp(result.reward_matrix)
    share = np.exp(policy - result.normalizers[:, None])
    rows = np.arange(result.n_rows)
    weight[rows, result.positives] = np.nan
    share[rows, result.positives] = np.nan
    return GradientFactors(weight, share, 1.0 / (result.tau * result.n_rows))
