"""Pool-adjacent-violators isotonic regression and step-function calibration maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def pava(y, w=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit of the sequence ``y``."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0:
        return y.copy()
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    # block stack: mean, weight, length
    means, weights, sizes = [], [], []
    for yi, wi in zip(y, w):
        m, ww, sz = yi, wi, 1
        while means and means[-1] > m:
            pm, pw, ps = means.pop(), weights.pop(), sizes.pop()
            tot = pw + ww
            m = (pm * pw + m * ww) / tot
            ww = tot
            sz += ps
        means.append(m)
        weights.append(ww)
        sizes.append(sz)
    return np.repeat(means, sizes)


@dataclass(frozen=True)
class CalibrationMap:
    """Non-decreasing step function from raw score to probability.

    Evaluated at the greatest breakpoint not above the score; scores below
    the first breakpoint take the first value.
    """

    x: tuple[float, ...] = ()
    y: tuple[float, ...] = ()

    @property
    def is_identity(self) -> bool:
        return len(self.x) == 0

    def __call__(self, score):
        s = np.asarray(score, dtype=float)
        if self.is_identity:
            return np.clip(s, 0.0, 1.0)
        xs = np.asarray(self.x)
        ys = np.asarray(self.y)
        i = np.searchsorted(xs, s, side="right") - 1
        return ys[np.clip(i, 0, len(xs) - 1)]

    def to_dict(self) -> dict:
        return {"x": list(self.x), "y": list(self.y)}

    @classmethod
    def from_dict(cls, d: dict) -> CalibrationMap:
        return cls(tuple(float(v) for v in d["x"]), tuple(float(v) for v in d["y"]))


def fit_isotonic(scores, outcomes, weights=None) -> CalibrationMap:
    """Fit a calibration map to ``(score, outcome)`` pairs.

    Outcomes may be fractional (e.g. the share of a group's packages in a
    class) when ``weights`` carries the group size. Equal scores are pooled
    before the fit so the result is a function of the score.
    """
    s = np.asarray(scores, dtype=float)
    o = np.asarray(outcomes, dtype=float)
    if s.size == 0:
        return CalibrationMap()
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    keep = w > 0
    s, o, w = s[keep], o[keep], w[keep]
    if s.size == 0:
        return CalibrationMap()
    order = np.lexsort((o, s))
    s, o, w = s[order], o[order], w[order]
    ux, start = np.unique(s, return_index=True)
    wsum = np.add.reduceat(w, start)
    ysum = np.add.reduceat(w * o, start)
    fitted = np.clip(pava(ysum / wsum, wsum), 0.0, 1.0)
    # keep only the points where the step changes
    change = np.ones(len(ux), dtype=bool)
    change[1:] = fitted[1:] != fitted[:-1]
    return CalibrationMap(tuple(ux[change].tolist()), tuple(fitted[change].tolist()))
