"""Duration-normalized engagement: envelope fitting, NAWP, distribution reports.

The watch-time ceiling is modeled as a line f_max(d) = a*d + b through the
per-duration-bin top quantile of average watch time; the floor is the
constant 0. NAWP normalizes a video's AWT between the two and clamps to
[0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FitError, NumericError
from .metrics import plcc, srcc
from .records import VideoRecord


@dataclass(frozen=True, slots=True)
class FitStats:
    bins_used: int
    residual_rmse: float


@dataclass(frozen=True, slots=True)
class EnvelopeModel:
    """Fitted watch-time ceiling f_max(d) = slope_a * d + intercept_b."""

    slope_a: float
    intercept_b: float
    quantile_tau: float = 0.97
    bin_width_s: float = 1.0
    fit_stats: FitStats = FitStats(bins_used=0, residual_rmse=0.0)

    def f_max(self, duration_s: float) -> float:
        return self.slope_a * duration_s + self.intercept_b

    def to_dict(self) -> dict:
        return {
            "slope_a": self.slope_a,
            "intercept_b": self.intercept_b,
            "quantile_tau": self.quantile_tau,
            "bin_width_s": self.bin_width_s,
            "fit_stats": {
                "bins_used": self.fit_stats.bins_used,
                "residual_rmse": self.fit_stats.residual_rmse,
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EnvelopeModel":
        try:
            stats = payload.get("fit_stats", {})
            return cls(
                slope_a=float(payload["slope_a"]),
                intercept_b=float(payload["intercept_b"]),
                quantile_tau=float(payload.get("quantile_tau", 0.97)),
                bin_width_s=float(payload.get("bin_width_s", 1.0)),
                fit_stats=FitStats(
                    bins_used=int(stats.get("bins_used", 0)),
                    residual_rmse=float(stats.get("residual_rmse", 0.0)),
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid envelope payload: {exc}") from exc


def fit_envelope(
    records: Sequence[VideoRecord],
    quantile_tau: float = 0.97,
    bin_width_s: float = 1.0,
    min_bin_count: int = 30,
) -> EnvelopeModel:
    """Fit the ceiling line through per-bin AWT quantiles.

    Durations are binned at ``bin_width_s``; bins with at least
    ``min_bin_count`` records contribute their tau-quantile of AWT
    (linear interpolation between order statistics) at the bin midpoint,
    and ordinary least squares fits a line through those points.
    """
    if not records:
        raise FitError("cannot fit envelope on empty record set")
    if not 0.0 < quantile_tau < 1.0:
        raise DataError("quantile_tau must lie in (0, 1)")
    if bin_width_s <= 0:
        raise DataError("bin_width_s must be positive")
    bins: dict[int, list[float]] = {}
    for record in records:
        bins.setdefault(int(math.floor(record.duration_s / bin_width_s)), []).append(record.awt_s)
    midpoints = []
    quantiles = []
    for key in sorted(bins):
        values = bins[key]
        if len(values) < min_bin_count:
            continue
        midpoints.append((key + 0.5) * bin_width_s)
        quantiles.append(float(np.quantile(np.asarray(values, dtype=np.float64), quantile_tau)))
    if len(midpoints) < 2:
        raise FitError(
            f"need at least 2 duration bins with >= {min_bin_count} records, "
            f"got {len(midpoints)}"
        )
    x = np.asarray(midpoints, dtype=np.float64)
    y = np.asarray(quantiles, dtype=np.float64)
    design = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - (slope * x + intercept)
    stats = FitStats(
        bins_used=len(midpoints),
        residual_rmse=math.sqrt(float(np.mean(residuals**2))),
    )
    model = EnvelopeModel(
        slope_a=float(slope),
        intercept_b=float(intercept),
        quantile_tau=quantile_tau,
        bin_width_s=bin_width_s,
        fit_stats=stats,
    )
    # The fit is unusable if the ceiling is not positive across the data span.
    for d in (min(x), max(x)):
        if model.f_max(d) <= 0:
            raise FitError(f"fitted ceiling is non-positive at duration {d:.3f}s")
    return model


def nawp(awt_s: float, duration_s: float, env: EnvelopeModel) -> float:
    """Normalized average watch percentage in [0, 1].

    Ratio of AWT to the ceiling at this duration, clamped above at 1 and
    (defensively) below at 0.
    """
    if duration_s <= 0:
        raise DataError("duration_s must be positive")
    ceiling = env.f_max(duration_s)
    if ceiling <= 0 or not math.isfinite(ceiling):
        raise NumericError(f"ceiling is non-positive at duration {duration_s:.3f}s")
    return min(max(awt_s / ceiling, 0.0), 1.0)


def annotate_nawp(records: Iterable[VideoRecord], env: EnvelopeModel) -> list[VideoRecord]:
    """Fill the nawp field on each record, preserving input order."""
    return [replace(r, nawp=nawp(r.awt_s, r.duration_s, env)) for r in records]


@dataclass(frozen=True, slots=True)
class DistributionReport:
    """Equal-width histogram plus the bimodality coefficient."""

    metric_name: str
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    bimodality_coefficient: float

    def to_dict(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "bin_edges": list(self.bin_edges),
            "counts": list(self.counts),
            "bimodality_coefficient": self.bimodality_coefficient,
        }


def bimodality_coefficient(values) -> float:
    """Sarle's bimodality coefficient with sample-size correction.

    BC = (skewness^2 + 1) / (kurtosis + 3*(n-1)^2 / ((n-2)*(n-3))) using
    bias-corrected sample skewness and excess kurtosis. Values above 5/9
    lean bimodal; the uniform distribution sits at the 5/9 boundary.
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    n = x.size
    if n < 4:
        raise NumericError("bimodality coefficient needs at least 4 samples")
    if not np.all(np.isfinite(x)):
        raise NumericError("values contain non-finite entries")
    m = x.mean()
    centered = x - m
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        raise NumericError("bimodality coefficient undefined for constant values")
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    g1 = m3 / m2**1.5
    g2 = m4 / m2**2 - 3.0
    skew = g1 * math.sqrt(n * (n - 1)) / (n - 2)
    kurt = ((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3))
    return (skew**2 + 1.0) / (kurt + 3.0 * (n - 1) ** 2 / ((n - 2) * (n - 3)))


def distribution_report(values, bins: int, metric_name: str = "metric") -> DistributionReport:
    """Histogram over [min, max] with the bimodality coefficient."""
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DataError("cannot report on empty values")
    if not np.all(np.isfinite(x)):
        raise NumericError("values contain non-finite entries")
    if bins < 1:
        raise DataError("bins must be >= 1")
    bc = bimodality_coefficient(x)
    counts, edges = np.histogram(x, bins=bins, range=(float(x.min()), float(x.max())))
    return DistributionReport(
        metric_name=metric_name,
        bin_edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        bimodality_coefficient=bc,
    )


def metric_correlation(records: Sequence[VideoRecord]) -> dict:
    """SRCC and PLCC between per-video ECR and NAWP."""
    pairs = [(r.ecr, r.nawp) for r in records if r.nawp is not None]
    if len(pairs) < 3:
        raise DataError("need at least 3 records with both ECR and NAWP")
    ecr_values = [p[0] for p in pairs]
    nawp_values = [p[1] for p in pairs]
    return {
        "srcc_ecr_nawp": srcc(ecr_values, nawp_values),
        "plcc_ecr_nawp": plcc(ecr_values, nawp_values),
    }
