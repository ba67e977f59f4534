"""In-band clock synchronization between two switches.

Collection phase: SW1 stamps a probe (t1), SW2 appends its own stamp (t2)
and returns it, SW1 stamps the return (t3).  Each probe yields a round-trip
time and a midpoint offset estimate ``t2 - (t1 + t3) / 2``.  The offset
series is fitted with an ordinary least-squares line.

Configuration phase: SW2 sets its counter from a SW1 timestamp and installs a
slope/intercept correction derived from the fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array


class ClockAnomaly(ValueError):
    """Probe whose return stamp precedes its send stamp."""


class DegenerateFit(ValueError):
    """Fewer than two distinct probe times."""


@dataclass(frozen=True)
class ProbeRecord:
    t1: int
    t2: int
    t3: int


@dataclass(frozen=True)
class DriftFit:
    slope: float
    intercept_ns: float
    residual_rms_ns: float
    sample_count: int


def rtt(record: ProbeRecord) -> int:
    """Round trip as seen by SW1.  Zero is allowed but degenerate."""
    d = record.t3 - record.t1
    if d < 0:
        raise ClockAnomaly(f"t3={record.t3} precedes t1={record.t1}")
    return d


def offset_sample(record: ProbeRecord) -> float:
    return record.t2 - (record.t1 + record.t3) / 2


def probe_time(record: ProbeRecord) -> float:
    """SW1-local instant the offset sample refers to."""
    return (record.t1 + record.t3) / 2


class DriftEstimator(RegressorMixin, BaseEstimator):
    """Least-squares line ``offset = slope * t + intercept``.

    Sums are taken about the sample means so that probe times of order 1e12
    ns do not swamp the slope (a drift of a few ppm) in round-off.

    Attributes:
        slope_: fitted rate of change of the offset.
        intercept_: offset at ``t = 0``.
        residual_rms_: root-mean-square residual of the fit.
        n_samples_: number of samples fitted.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=2, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError("DriftEstimator takes a single feature (probe time)")
        t = X[:, 0].astype(float)
        o = y.astype(float)
        t0, o0 = t.mean(), o.mean()
        dt = t - t0
        sxx = float(np.dot(dt, dt))
        if sxx == 0.0:
            raise DegenerateFit("all probe times are identical")
        self.slope_ = float(np.dot(dt, o - o0)) / sxx
        self.intercept_ = o0 - self.slope_ * t0
        resid = o - (self.slope_ * t + self.intercept_)
        self.residual_rms_ = math.sqrt(float(np.mean(resid * resid)))
        self.n_samples_ = len(t)
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        X = check_array(X)
        return self.slope_ * X[:, 0] + self.intercept_

    def to_fit(self) -> DriftFit:
        check_is_fitted(self, "slope_")
        return DriftFit(self.slope_, self.intercept_, self.residual_rms_, self.n_samples_)


def fit_drift(samples: Sequence[Tuple[float, float]]) -> DriftFit:
    """OLS fit of ``(probe_time, offset)`` pairs."""
    if len(samples) < 2:
        raise DegenerateFit("need at least two samples")
    arr = np.asarray(samples, dtype=float)
    return DriftEstimator().fit(arr[:, :1], arr[:, 1]).to_fit()


def compensation_from_fit(
    fit: DriftFit,
    new_reading: int,
    reading_before_set: float,
    prior: Tuple[float, float] = (1.0, 0.0),
) -> Tuple[float, float]:
    """Raw-counter ``(slope, intercept)`` after a set-and-compensate step.

    The fit says SW1 time is ``(C - b) / (1 + a)`` where ``C`` is SW2's
    reading before the set.  Setting the clock to ``new_reading`` shifts
    ``C`` by ``new_reading - reading_before_set``; the correction on top of
    the current reading is therefore ``(1 + a, new_reading - C_c + b)``,
    which is then composed with the compensation already installed.
    """
    s1 = 1.0 + fit.slope
    i1 = new_reading - reading_before_set + fit.intercept_ns
    s0, i0 = prior
    return s0 * s1, i0 + i1 * s0


def sync_csv(records: Sequence[ProbeRecord], fit: DriftFit) -> str:
    rows = ["probe_time_ns,rtt_ns,offset_ns"]
    for r in records:
        rows.append(f"{probe_time(r):.9f},{rtt(r)},{offset_sample(r):.9f}")
    rows.append(f"# slope={fit.slope:.15e},intercept={fit.intercept_ns:.9f},"
                f"residual_rms={fit.residual_rms_ns:.9f}")
    return "\n".join(rows) + "\n"


def summarize_rtts(records: Sequence[ProbeRecord]) -> List[int]:
    return [rtt(r) for r in records]
