"""Confidence predicates for early termination of partial sums.

Two families:

* negative prediction for ReLU neurons — decide from k of n terms that the
  full pre-activation will be negative, so the output is 0;
* dominance prediction for top-1 heads — decide from partial class scores
  that the current argmax will stay the argmax.

Both come in a threshold flavor (one stored-constant comparison) and a
statistical flavor (a Wald-style test on the running mean/variance of the
consumed terms).  The statistical test guards on the sign of the partial sum
and compares the squared statistic against a precomputed squared normal
quantile; a zero-variance stream is treated as infinitely confident evidence
in the direction of its sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import PredictorMisuseError, SumskipError


@dataclass
class PartialStats:
    """Running sufficient statistics of a term stream: count, sum, sum of squares."""

    k: int = 0
    sum: float = 0.0
    sumsq: float = 0.0

    def consume(self, value: float) -> None:
        self.k += 1
        self.sum += value
        self.sumsq += value * value

    @property
    def variance_numerator(self) -> float:
        """k*sumsq - sum^2 (nonnegative up to rounding, by Cauchy-Schwarz)."""
        return self.k * self.sumsq - self.sum * self.sum


@dataclass(frozen=True)
class AffineFold:
    """Per-unit scale/shift absorbed into the term stream: w, b, total term count n."""

    w: float = 1.0
    b: float = 0.0
    n: int = 1


@dataclass(frozen=True)
class ReluPredictorCfg:
    """Negative-prediction setup for one layer's ReLU neurons.

    kind: "none" | "threshold" (param = T) | "statstest" (param = alpha).
    Checks run after k consumed terms; schedule "once_at_k" checks only at k,
    "every_k" at k, 2k, ...  The alpha = 0 sentinel keeps the test's overhead
    but never prunes.
    """

    kind: str = "none"
    param: float = 0.0
    k: int = 32
    schedule: str = "once_at_k"
    r: float | None = None
    affine: AffineFold = field(default=AffineFold())

    def validate(self) -> None:
        if self.kind not in ("none", "threshold", "statstest"):
            raise SumskipError(f"unknown predictor kind {self.kind!r}")
        if self.schedule not in ("once_at_k", "every_k"):
            raise SumskipError(f"unknown schedule {self.schedule!r}")
        if self.k < 1:
            raise SumskipError(f"check position k must be >= 1, got {self.k}")
        if self.kind == "statstest" and not 0.0 <= self.param <= 0.5:
            raise SumskipError(f"alpha must lie in (0, 0.5] (0 = sentinel), got {self.param}")
        if self.r is not None and not 0.1 <= self.r <= 0.5:
            raise SumskipError(f"disable ratio r must lie in [0.1, 0.5], got {self.r}")


@dataclass(frozen=True)
class HeadPredictorCfg:
    """Dominance-prediction setup for the top-1 head.

    ranks lists which score ranks the leader is tested against (2 = runner-up).
    For kind "threshold", thresholds aligns with ranks; for "statstest", alpha
    is the overall level split by Holm-Bonferroni.
    """

    kind: str = "none"
    k: int = 160
    ranks: tuple[int, ...] = (2, 3)
    alpha: float = 0.1
    thresholds: tuple[float, ...] = ()

    def validate(self, n_classes: int | None = None) -> None:
        if self.kind not in ("none", "threshold", "statstest"):
            raise SumskipError(f"unknown head predictor kind {self.kind!r}")
        if self.kind == "none":
            return
        if self.k < 1:
            raise SumskipError(f"head check position must be >= 1, got {self.k}")
        if not self.ranks or any(r < 2 for r in self.ranks):
            raise SumskipError(f"tested ranks must be >= 2, got {self.ranks}")
        if n_classes is not None and any(r > n_classes for r in self.ranks):
            raise SumskipError(f"ranks {self.ranks} exceed class count {n_classes}")
        if self.kind == "threshold":
            if len(self.thresholds) != len(self.ranks):
                raise SumskipError("one threshold per tested rank required")
            if any(t < 0 for t in self.thresholds):
                raise SumskipError("head thresholds must be >= 0")
        if self.kind == "statstest" and not 0.0 < self.alpha <= 0.5:
            raise SumskipError(f"overall alpha must lie in (0, 0.5], got {self.alpha}")


@dataclass
class ClassScoreStats:
    """Partial head state: running class scores plus per-tested-rank difference stats.

    ``pair_stats[j]`` holds PartialStats of the stream score_term[winner] -
    score_term[opponent_j] for each tested rank j.
    """

    scores: list[float]
    pair_stats: dict[int, PartialStats]


def fold_affine(xi: float, cfg: ReluPredictorCfg) -> float:
    """Fold the unit's scale/shift into one term: w*xi + b/n.

    Summing the folded stream over all n terms reproduces w*sum(xi) + b, so
    every predicate can assume the plain (w=1, b=0) form.
    """
    a = cfg.affine
    if a.n < 1:
        raise PredictorMisuseError(f"affine fold needs n >= 1, got {a.n}")
    return a.w * xi + a.b / a.n


def threshold_predict(stats: PartialStats, threshold: float) -> bool:
    """True iff the partial sum is below k*T (i.e. the running mean is below T)."""
    if stats.k < 1:
        raise PredictorMisuseError("threshold_predict needs at least one consumed term")
    return stats.sum < stats.k * threshold


def variance_floor(stats: PartialStats) -> float:
    """Tolerance below which k*sumsq - sum^2 counts as zero variance."""
    return 1e-12 * stats.k * max(stats.sumsq, 1.0)


def statstest_predict(stats: PartialStats, alpha: float, quantile_sq: float | None = None) -> bool:
    """Wald-style negative prediction on the folded term stream.

    Requires a negative partial sum, then either a zero-variance stream or a
    squared statistic sum^2 / (k*sumsq - sum^2) beyond the squared alpha
    quantile of the standard normal.  ``quantile_sq`` may pass the stored
    constant (inv_normal_cdf(alpha)**2) to skip recomputing it.
    """
    if stats.k < 2:
        raise PredictorMisuseError("statstest_predict needs at least two consumed terms")
    if not 0.0 < alpha <= 0.5:
        raise PredictorMisuseError(f"alpha must lie in (0, 0.5], got {alpha}")
    if stats.sum >= 0.0:
        return False
    d = stats.variance_numerator
    if d <= variance_floor(stats):
        return True
    if quantile_sq is None:
        quantile_sq = inv_normal_cdf(alpha) ** 2
    return stats.sum * stats.sum / d > quantile_sq


# Coefficients of the Beasley-Springer-Moro style rational approximation
# (Acklam's constants); one Halley step against an erfc-based CDF refines the
# result to full double precision.
_ICDF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
           1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ICDF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
           6.680131188771972e+01, -1.328068155288572e+01)
_ICDF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
           -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ICDF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
           3.754408661907416e+00)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via erfc (accurate in both tails)."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def inv_normal_cdf(p: float) -> float:
    """Standard normal quantile, |error| <= 1e-8 over (0, 1)."""
    if not 0.0 < p < 1.0:
        raise PredictorMisuseError(f"quantile argument must lie in (0, 1), got {p}")
    a, b, c, d = _ICDF_A, _ICDF_B, _ICDF_C, _ICDF_D
    p_low, p_high = 0.02425, 1.0 - 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    # Halley refinement against the erfc-based CDF.
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def pair_p_value(stats: PartialStats) -> float:
    """One-sided p-value that the difference stream's mean is positive.

    Uses the partial mean over partial standard deviation form (no sqrt(k)
    factor): p = Phi(-sqrt(sum^2 / (k*sumsq - sum^2))).  Guard: a nonpositive
    difference sum is no evidence of dominance, so p = 1; a zero-variance
    positive stream gives p = 0.
    """
    if stats.k < 2:
        raise PredictorMisuseError("pair p-value needs at least two consumed terms")
    if stats.sum <= 0.0:
        return 1.0
    d = stats.variance_numerator
    if d <= variance_floor(stats):
        return 0.0
    return normal_cdf(-math.sqrt(stats.sum * stats.sum / d))


def holm_bonferroni(pvalues, alpha: float) -> bool:
    """Step-down multiple-testing rule: all m tests must reject.

    Sorted ascending, p_(i) must be <= alpha / (m - i + 1) for every i.
    """
    m = len(pvalues)
    if m < 1:
        raise PredictorMisuseError("holm_bonferroni needs at least one p-value")
    if any(not 0.0 <= p <= 1.0 for p in pvalues):
        raise PredictorMisuseError("p-values must lie in [0, 1]")
    for i, p in enumerate(sorted(pvalues), start=1):
        if p > alpha / (m - i + 1):
            return False
    return True


def rank_descending(scores) -> list[int]:
    """Class indices sorted by descending score, ties broken by lower index."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def dominance_threshold(scores, thresholds, ranks=None) -> bool:
    """True iff the top score beats each tested rank by its threshold.

    ``thresholds`` aligns with ``ranks`` (default ranks 2..len(thresholds)+1):
    requires c1 - c_rank > T strictly for every configured rank.
    """
    if ranks is None:
        ranks = tuple(range(2, 2 + len(thresholds)))
    if len(ranks) != len(thresholds):
        raise PredictorMisuseError("one threshold per tested rank required")
    if max(ranks, default=1) > len(scores):
        raise PredictorMisuseError(f"rank {max(ranks)} needs at least that many classes")
    order = rank_descending(scores)
    top = scores[order[0]]
    return all(top - scores[order[r - 1]] > t for r, t in zip(ranks, thresholds))


def dominance_statstest(stats: ClassScoreStats, alpha_overall: float) -> bool:
    """True iff Holm-Bonferroni rejects every tested rank's dominance test."""
    if not stats.pair_stats:
        raise PredictorMisuseError("no tested ranks configured")
    pvalues = [pair_p_value(s) for s in stats.pair_stats.values()]
    return holm_bonferroni(pvalues, alpha_overall)
