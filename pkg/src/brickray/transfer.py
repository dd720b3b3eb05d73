"""Transfer functions (scalar -> RGBA) and on-the-fly sample filters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FILTER_NONE = 0
FILTER_THRESHOLD = 1
FILTER_GAMMA = 2
FILTER_INVERT = 3

_FILTER_NAMES = {"none": FILTER_NONE, "threshold": FILTER_THRESHOLD,
                 "gamma": FILTER_GAMMA, "invert": FILTER_INVERT}


def _lookup_filter(name) -> int:
    try:
        return _FILTER_NAMES[name]
    except KeyError:
        raise ValueError(f"unknown sample filter '{name}'") from None


@dataclass(frozen=True)
class SampleFilter:
    """Scalar filter applied before classification."""

    kind: int = FILTER_NONE
    param: float = 0.0  # tau for threshold, gamma exponent for gamma

    def __post_init__(self):
        if self.kind == FILTER_THRESHOLD and not 0.0 <= self.param <= 1.0:
            raise ValueError("threshold tau must be in [0, 1]")
        if self.kind == FILTER_GAMMA and self.param <= 0.0:
            raise ValueError("gamma must be positive")

    @classmethod
    def parse(cls, spec) -> "SampleFilter":
        """From 'none' | 'invert' | 'threshold:0.3' | 'gamma:2.2' or a dict."""
        if isinstance(spec, SampleFilter):
            return spec
        if isinstance(spec, dict):
            kind = _lookup_filter(spec["kind"])
            param = float(spec.get("tau", spec.get("gamma", spec.get("param", 0.0))))
            return cls(kind, param)
        name, _, arg = str(spec).partition(":")
        kind = _lookup_filter(name)
        return cls(kind, float(arg) if arg else (1.0 if kind == FILTER_GAMMA else 0.0))

    def apply(self, scalar):
        """Filter a scalar (or array of scalars) in [0, 1]."""
        s = np.asarray(scalar, dtype=np.float64)
        if self.kind == FILTER_THRESHOLD:
            out = np.where(s < self.param, 0.0, s)
        elif self.kind == FILTER_GAMMA:
            out = s ** self.param
        elif self.kind == FILTER_INVERT:
            out = 1.0 - s
        else:
            out = s
        return float(out) if np.isscalar(scalar) or out.ndim == 0 else out

    def to_json(self) -> dict:
        name = {v: k for k, v in _FILTER_NAMES.items()}[self.kind]
        d = {"kind": name}
        if self.kind == FILTER_THRESHOLD:
            d["tau"] = self.param
        elif self.kind == FILTER_GAMMA:
            d["gamma"] = self.param
        return d


class TransferFunction:
    """Piecewise-linear map from a normalized scalar in [0, 1] to RGBA.

    Control point positions are strictly increasing with the first at 0 and
    the last at 1; components are in [0, 1].
    """

    def __init__(self, points):
        pts = [(float(x), tuple(float(c) for c in rgba)) for x, rgba in points]
        if len(pts) < 2:
            raise ValueError("need at least two control points")
        xs = [p[0] for p in pts]
        if xs[0] != 0.0 or xs[-1] != 1.0:
            raise ValueError("control points must start at 0 and end at 1")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("control point positions must be strictly increasing")
        for _, rgba in pts:
            if len(rgba) != 4 or any(not 0.0 <= c <= 1.0 for c in rgba):
                raise ValueError("RGBA components must be in [0, 1]")
        self.positions = np.array(xs, dtype=np.float64)
        self.colors = np.array([p[1] for p in pts], dtype=np.float64)

    @classmethod
    def grayscale(cls) -> "TransferFunction":
        """Default ramp: transparent black to opaque white."""
        return cls([(0.0, (0, 0, 0, 0)), (1.0, (1, 1, 1, 1))])

    @classmethod
    def constant(cls, rgba) -> "TransferFunction":
        return cls([(0.0, rgba), (1.0, rgba)])

    @classmethod
    def from_json(cls, doc) -> "TransferFunction":
        return cls([(p["x"], p["rgba"]) for p in doc["points"]])

    def to_json(self) -> dict:
        return {"points": [{"x": float(x), "rgba": [float(c) for c in rgba]}
                           for x, rgba in zip(self.positions, self.colors)]}

    def __call__(self, scalar):
        """Evaluate at scalar(s) in [0, 1]; returns RGBA (or (..., 4) array)."""
        s = np.clip(np.asarray(scalar, dtype=np.float64), 0.0, 1.0)
        idx = np.clip(np.searchsorted(self.positions, s, side="right") - 1, 0,
                      len(self.positions) - 2)
        x0 = self.positions[idx]
        x1 = self.positions[idx + 1]
        u = (s - x0) / (x1 - x0)
        c0 = self.colors[idx]
        c1 = self.colors[idx + 1]
        return c0 + u[..., None] * (c1 - c0)
