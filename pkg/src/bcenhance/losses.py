"""Training objectives.

Two adversarial forms are supported. The negative-log-likelihood form is the
classic saturating GAN objective; the least-squares form replaces the log
terms with squared distances to the real/fake targets (1 and 0) and is the
form used for training. Both are evaluated on discriminator score vectors:
the classification head contributes a single score, the defect head one
score per spectral patch, and expectations become means over those entries.

Loss values are logged one record per iteration as tab-separated columns
(iteration, adv_classification, adv_defect, cycle, identity, total); the
baseline variant logs its single adversarial term in the classification
column and zero in the defect column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from bcenhance.errors import ConfigError, DimensionError
from bcenhance.nn import tensor as ops
from bcenhance.nn.tensor import Tensor

NEGATIVE_LOG_LIKELIHOOD = "negative_log_likelihood"
LEAST_SQUARES = "least_squares"
BASELINE = "baseline"
DUAL = "dual"

LOG_COLUMNS = ("iteration", "adv_classification", "adv_defect", "cycle", "identity", "total")
# Keeps log terms finite when a score saturates at 0 or 1.
SCORE_FLOOR = 1e-12


@dataclass
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_id: float = 5.0
    adversarial_form: str = LEAST_SQUARES

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.lambda_id < 0:
            raise ConfigError(f"loss weights must be nonnegative, got {self.lambda_cyc}, {self.lambda_id}")
        if self.adversarial_form not in (NEGATIVE_LOG_LIKELIHOOD, LEAST_SQUARES):
            raise ConfigError(f"unknown adversarial form {self.adversarial_form!r}")


def _check_form(form: str) -> None:
    if form not in (NEGATIVE_LOG_LIKELIHOOD, LEAST_SQUARES):
        raise ConfigError(f"unknown adversarial form {form!r}")


def cycle_loss(b: Tensor, b_reconstructed: Tensor) -> Tensor:
    """Mean absolute reconstruction error of the round trip back to b."""
    if b.data.shape != b_reconstructed.data.shape:
        raise DimensionError(
            f"cycle loss inputs must match, got {b.data.shape} vs {b_reconstructed.data.shape}"
        )
    return ops.mean(ops.absolute(ops.sub(b_reconstructed, b)))


def identity_loss(a: Tensor, g_of_a: Tensor) -> Tensor:
    """Mean absolute deviation of the generator from identity on target-domain input."""
    if a.data.shape != g_of_a.data.shape:
        raise DimensionError(f"identity loss inputs must match, got {a.data.shape} vs {g_of_a.data.shape}")
    return ops.mean(ops.absolute(ops.sub(g_of_a, a)))


def adv_d_loss(real_scores: Tensor, fake_scores: Tensor | None, form: str) -> Tensor:
    """Discriminator objective (to minimize).

    ``fake_scores=None`` drops the fake-sample terms, which reproduces the
    real-only discriminator gradient some training recipes use; the default
    full objective requires both.
    """
    _check_form(form)
    if form == LEAST_SQUARES:
        real_term = ops.mean(ops.square(ops.sub(real_scores, 1.0)))
        if fake_scores is None:
            return real_term
        return ops.add(real_term, ops.mean(ops.square(fake_scores)))
    real_term = ops.neg(ops.mean(ops.log(ops.clamp_min(real_scores, SCORE_FLOOR))))
    if fake_scores is None:
        return real_term
    fake_term = ops.neg(ops.mean(ops.log(ops.clamp_min(ops.sub(1.0, fake_scores), SCORE_FLOOR))))
    return ops.add(real_term, fake_term)


def adv_g_loss(fake_scores: Tensor, form: str) -> Tensor:
    """Generator adversarial objective (to minimize) on the discriminator's fake scores."""
    _check_form(form)
    if form == LEAST_SQUARES:
        return ops.mean(ops.square(ops.sub(fake_scores, 1.0)))
    # Saturating form: the generator minimizes E[log(1 - D(fake))].
    return ops.mean(ops.log(ops.clamp_min(ops.sub(1.0, fake_scores), SCORE_FLOOR)))


def dual_adv_losses(c_scores: Tensor, d_scores: Tensor, form: str) -> tuple[Tensor, Tensor]:
    """Generator-side adversarial terms from the classification and defect discriminators."""
    return adv_g_loss(c_scores, form), adv_g_loss(d_scores, form)


def total_objective(parts: dict, weights: LossWeights, variant: str) -> Tensor | float:
    """Combine loss parts into the training objective for the given variant.

    ``parts`` maps names to scalars or Tensors: baseline needs
    {adv, cyc, id}; dual needs {adc, add, cyc, id}.
    """
    if variant == BASELINE:
        needed = ("adv", "cyc", "id")
    elif variant == DUAL:
        needed = ("adc", "add", "cyc", "id")
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    missing = [k for k in needed if k not in parts]
    if missing:
        raise ConfigError(f"variant {variant!r} objective missing parts: {', '.join(missing)}")
    if variant == BASELINE:
        adv = parts["adv"]
    else:
        adv = parts["adc"] + parts["add"]
    return adv + weights.lambda_cyc * parts["cyc"] + weights.lambda_id * parts["id"]


@dataclass
class LossRecord:
    iteration: int
    adv_classification: float
    adv_defect: float
    cycle: float
    identity: float
    total: float

    def format(self) -> str:
        vals = (self.adv_classification, self.adv_defect, self.cycle, self.identity, self.total)
        return "\t".join([str(self.iteration)] + [f"{v:.17g}" for v in vals])


def parse_loss_log(lines: Iterable[str]) -> list[LossRecord]:
    records = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != len(LOG_COLUMNS):
            raise ConfigError(f"loss log line has {len(cols)} columns, expected {len(LOG_COLUMNS)}")
        records.append(LossRecord(int(cols[0]), *(float(c) for c in cols[1:])))
    return records
