"""Stochastic signal models: sparse Bernoulli-Gaussian sources, linear
process observations, and noise injection.

Sampling is backed by the counter-based Philox generator so that every
(seed, stream) pair yields a reproducible, independent stream.  All
convolutions are valid-region only: no output entry ever involves samples
outside the provided window, which removes end-effect bias from the
experiment harnesses.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filters import Filter


class InsufficientMarginError(ValueError):
    """The input window does not cover the requested output range."""


@dataclass(frozen=True)
class BgModel:
    """Bernoulli(p)-Gaussian law: each entry is N(0,1) with probability p,
    exactly zero otherwise.  ``seed`` fixes the sample stream."""

    p: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"activity probability must be in (0, 1], got {self.p}")


@dataclass(frozen=True)
class Window:
    """Contiguous samples of a process realization on [start, start+len)."""

    values: np.ndarray
    start: int = 0

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("values must be a non-empty 1-d vector")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "start", int(self.start))

    def __len__(self) -> int:
        return self.values.size

    @property
    def stop(self) -> int:
        return self.start + self.values.size

    def slice(self, start: int, stop: int) -> "Window":
        if start < self.start or stop > self.stop or start >= stop:
            raise InsufficientMarginError(
                f"requested [{start},{stop}) outside window [{self.start},{self.stop})")
        return Window(self.values[start - self.start : stop - self.start], start)

    def to_json(self) -> str:
        return json.dumps({"start": self.start, "values": self.values.tolist()})

    @staticmethod
    def from_json(text: str) -> "Window":
        d = json.loads(text)
        return Window(np.asarray(d["values"], dtype=float), int(d["start"]))


def stream_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent reproducible stream for a (seed, stream-id) pair."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def sample_bg(model: BgModel, index_range: tuple[int, int], stream: int = 0) -> Window:
    """IID Bernoulli-Gaussian samples on the half-open ``index_range``."""
    start, stop = int(index_range[0]), int(index_range[1])
    n = stop - start
    if n <= 0:
        raise ValueError("empty index range")
    rng = stream_rng(model.seed, stream)
    mask = rng.random(n) < model.p
    vals = rng.standard_normal(n)
    return Window(np.where(mask, vals, 0.0), start)


def linear_process(a: Filter, x: Window, out_range: tuple[int, int] | None = None) -> Window:
    """Filter a window: (a * x)_t = sum_u a_u x_{t-u}, valid region only.

    The full valid region is [x.start + a_max, x.stop - 1 + a_min]; every
    output entry there is a complete convolution sum.  Pass ``out_range``
    to request a specific (half-open) sub-range; coverage violations raise
    InsufficientMarginError.
    """
    if a.is_zero:
        raise ValueError("cannot filter with the zero filter")
    valid_start = x.start + (a.stop - 1)
    valid_stop = x.stop + a.start  # one past the last complete index
    if valid_stop <= valid_start:
        raise InsufficientMarginError("window shorter than the filter support")
    vals = np.convolve(x.values, a.coeffs, mode="valid")
    out = Window(vals, valid_start)
    if out_range is not None:
        return out.slice(int(out_range[0]), int(out_range[1]))
    return out


def add_ma_gaussian(x: Window, sigma: float, b: Filter, seed: int, stream: int = 0) -> Window:
    """Add a moving-average Gaussian process sigma * (b * G) on x's window.

    ``b`` should have unit l2 norm; otherwise it is renormalized with a
    warning.  sigma = 0 returns the input unchanged.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return x
    nb = b.norm(2)
    if abs(nb - 1.0) > 1e-12:
        warnings.warn("moving-average kernel renormalized to unit l2 norm")
        b = b.scale(1.0 / nb)
    g_start = x.start - (b.stop - 1)
    g_stop = x.stop - b.start
    rng = stream_rng(seed, stream)
    g = Window(rng.standard_normal(g_stop - g_start), g_start)
    noise = linear_process(b, g)
    assert noise.start == x.start and len(noise) == len(x)
    return Window(x.values + sigma * noise.values, x.start)


def add_adversarial_offset(x: Window, eta: float) -> Window:
    """Add the constant disturbance eta (the extremal point of the
    sup-norm ball used in the worst-case analysis)."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if eta == 0.0:
        return x
    return Window(x.values + eta, x.start)


# ---------------------------------------------------------------------------
# on-disk formats
# ---------------------------------------------------------------------------


def write_window(path: Path | str, w: Window, fmt: str = "json") -> list[Path]:
    """Write a window as JSON or as little-endian float64 + JSON sidecar."""
    path = Path(path)
    if fmt == "json":
        out = path.with_suffix(".json")
        out.write_text(w.to_json())
        return [out]
    if fmt == "bin":
        bin_path = path.with_suffix(".bin")
        side_path = path.with_suffix(".meta.json")
        bin_path.write_bytes(w.values.astype("<f8").tobytes())
        side_path.write_text(json.dumps(
            {"start": w.start, "length": len(w), "dtype": "<f8"}))
        return [bin_path, side_path]
    raise ValueError(f"unknown format {fmt!r}")


def read_window(path: Path | str) -> Window:
    path = Path(path)
    if path.suffix == ".json" and not path.name.endswith(".meta.json"):
        return Window.from_json(path.read_text())
    if path.suffix == ".bin":
        side = json.loads(path.with_suffix(".meta.json").read_text())
        vals = np.frombuffer(path.read_bytes(), dtype=side["dtype"]).astype(float)
        if vals.size != side["length"]:
            raise ValueError("binary payload length does not match sidecar")
        return Window(vals, int(side["start"]))
    raise ValueError(f"cannot infer window format from {path.name!r}")
