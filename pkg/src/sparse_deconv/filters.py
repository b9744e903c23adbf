"""Finite-filter algebra on integer-indexed real sequences.

A filter is a finitely supported real sequence together with the integer
index of its first coefficient.  This module provides exact convolution
(direct or FFT), time reversal and shifting, z-transform root
factorization, truncated-inverse construction from roots, and the scalar
functionals (deltaness, angle-to-delta, frequency margin) used by the
threshold and stability analyses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# direct convolution below this kernel length, FFT above (measured crossover)
_FFT_THRESHOLD = 32

_ROOT_RESIDUAL_TOL = 1e-8
_UNIT_CIRCLE_TOL = 1e-9


class RootFindingError(RuntimeError):
    """Polynomial root iteration failed to converge or hit the unit circle."""


def _trim(coeffs: np.ndarray, offset: int) -> tuple[np.ndarray, int]:
    nz = np.flatnonzero(coeffs)
    if nz.size == 0:
        return np.zeros(1), 0
    lo, hi = nz[0], nz[-1] + 1
    return coeffs[lo:hi], offset + int(lo)


@dataclass(frozen=True, eq=False)
class Filter:
    """Finitely supported sequence; ``coeffs[i]`` sits at time ``offset + i``.

    Leading/trailing exact zeros are trimmed on construction, so the first
    and last stored coefficients are nonzero except for the canonical zero
    filter ``Filter([0.0], 0)``.
    """

    coeffs: np.ndarray
    offset: int = 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, Filter):
            return NotImplemented
        return self.offset == other.offset and np.array_equal(self.coeffs, other.coeffs)

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("coeffs must be a non-empty 1-d real vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coeffs must be finite")
        arr, off = _trim(arr.copy(), int(self.offset))
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)
        object.__setattr__(self, "offset", off)

    # -- basic structure -------------------------------------------------

    def __len__(self) -> int:
        return self.coeffs.size

    @property
    def start(self) -> int:
        return self.offset

    @property
    def stop(self) -> int:
        """One past the last support index."""
        return self.offset + self.coeffs.size

    @property
    def is_zero(self) -> bool:
        return self.coeffs.size == 1 and self.coeffs[0] == 0.0

    def value_at(self, t: int) -> float:
        """Coefficient at time ``t`` (0 outside the stored support)."""
        i = t - self.offset
        if 0 <= i < self.coeffs.size:
            return float(self.coeffs[i])
        return 0.0

    def to_array(self, start: int, stop: int) -> np.ndarray:
        """Dense values on ``[start, stop)`` with zero padding."""
        out = np.zeros(stop - start)
        lo = max(start, self.start)
        hi = min(stop, self.stop)
        if lo < hi:
            out[lo - start : hi - start] = self.coeffs[lo - self.offset : hi - self.offset]
        return out

    # -- algebra ---------------------------------------------------------

    def shift(self, k: int) -> "Filter":
        return Filter(self.coeffs, self.offset + k)

    def scale(self, alpha: float) -> "Filter":
        return Filter(self.coeffs * alpha, self.offset)

    def __add__(self, other: "Filter") -> "Filter":
        lo = min(self.start, other.start)
        hi = max(self.stop, other.stop)
        return Filter(self.to_array(lo, hi) + other.to_array(lo, hi), lo)

    def __sub__(self, other: "Filter") -> "Filter":
        lo = min(self.start, other.start)
        hi = max(self.stop, other.stop)
        return Filter(self.to_array(lo, hi) - other.to_array(lo, hi), lo)

    def norm(self, ord: float = 2) -> float:
        if ord == 2:
            return float(np.linalg.norm(self.coeffs))
        if ord == 1:
            return float(np.abs(self.coeffs).sum())
        if ord == math.inf:
            return float(np.abs(self.coeffs).max())
        raise ValueError(f"unsupported norm order {ord}")

    # -- serialization ---------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({"offset": self.offset, "coeffs": self.coeffs.tolist()})

    @staticmethod
    def from_json(text: str) -> "Filter":
        d = json.loads(text)
        return Filter(np.asarray(d["coeffs"], dtype=float), int(d["offset"]))


def unit() -> Filter:
    """The convolution unit: 1 at time 0."""
    return Filter(np.array([1.0]), 0)


def delta(k: int, alpha: float = 1.0) -> Filter:
    return Filter(np.array([alpha]), k)


def parse_filter(text: str, offset: int = 0) -> Filter:
    """Comma-separated coefficient list, e.g. ``"1,-0.5"``."""
    vals = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    return Filter(np.asarray(vals), offset)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _conv_values(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    if min(f.size, g.size) <= _FFT_THRESHOLD:
        return np.convolve(f, g)
    n = f.size + g.size - 1
    size = 1 << (n - 1).bit_length()
    out = np.fft.irfft(np.fft.rfft(f, size) * np.fft.rfft(g, size), size)[:n]
    return out


def convolve(f: Filter, g: Filter) -> Filter:
    """Exact convolution; support is the Minkowski sum of the supports."""
    if f.is_zero or g.is_zero:
        return Filter(np.zeros(1), 0)
    return Filter(_conv_values(f.coeffs, g.coeffs), f.offset + g.offset)


def convolve_direct(f: Filter, g: Filter) -> Filter:
    """Direct O(nm) convolution regardless of length (reference path)."""
    if f.is_zero or g.is_zero:
        return Filter(np.zeros(1), 0)
    return Filter(np.convolve(f.coeffs, g.coeffs), f.offset + g.offset)


def time_reverse(f: Filter) -> Filter:
    """Entry at time t maps to -t.  Involution."""
    return Filter(f.coeffs[::-1], -(f.offset + f.coeffs.size - 1))


def geometric_filter(s: float, L: int) -> Filter:
    """(1, s, s^2, ..., s^(L-1)) anchored at time 0; requires |s| < 1."""
    if abs(s) >= 1:
        raise ValueError(f"geometric ratio must satisfy |s| < 1, got {s}")
    if L < 1:
        raise ValueError("L must be >= 1")
    return Filter(float(s) ** np.arange(L), 0)


def geometric_length(s: float, floor: float = 1e-12) -> int:
    """Truncation length with tail |s|^L below ``floor`` (min 1)."""
    if s == 0:
        return 1
    return max(1, math.ceil(math.log(floor) / math.log(abs(s))))


# ---------------------------------------------------------------------------
# z-transform root factorization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RootFactorization:
    """Roots of A(z) = c0 * prod_j (1 - m_j z) * prod_i (1 - p_i z^-1).

    ``plus_roots`` pair with z^-1 (causal side), ``minus_roots`` with z
    (anticausal side).  Every root must have modulus < 1; ``c0 is None``
    means "normalize so the coefficient at time 0 equals 1".
    """

    plus_roots: tuple = ()
    minus_roots: tuple = ()
    c0: float | None = None

    def __post_init__(self):
        plus = tuple(complex(r) for r in self.plus_roots)
        minus = tuple(complex(r) for r in self.minus_roots)
        for r in plus + minus:
            if abs(r) >= 1:
                raise ValueError(f"root {r} has modulus >= 1")
        object.__setattr__(self, "plus_roots", plus)
        object.__setattr__(self, "minus_roots", minus)

    @property
    def all_roots(self) -> tuple:
        return self.minus_roots + self.plus_roots

    @property
    def max_modulus(self) -> float:
        roots = self.all_roots
        return max(abs(r) for r in roots) if roots else 0.0

    def resolved_c0(self) -> float:
        """Numeric scale; computed for the normalized case."""
        if self.c0 is not None:
            return float(self.c0)
        vals, off = _expand_root_product(self)
        a0 = vals[-off] if 0 <= -off < vals.size else 0.0
        if abs(a0) < 1e-300:
            raise ValueError("cannot normalize: coefficient at time 0 vanishes")
        return 1.0 / float(a0.real)


def _expand_root_product(rf: RootFactorization) -> tuple[np.ndarray, int]:
    """Expand prod (1 - m z) prod (1 - p z^-1) without the c0 scale."""
    vals = np.array([1.0 + 0.0j])
    off = 0
    for r in rf.minus_roots:
        # (1 - r z): coefficients (-r, 1) at times (-1, 0)
        vals = np.convolve(vals, np.array([-r, 1.0]))
        off -= 1
    for r in rf.plus_roots:
        # (1 - r z^-1): coefficients (1, -r) at times (0, 1)
        vals = np.convolve(vals, np.array([1.0, -r]))
    return vals, off


def _realify(vals: np.ndarray, what: str) -> np.ndarray:
    scale = np.abs(vals).max() or 1.0
    if np.abs(vals.imag).max() > 1e-9 * scale:
        raise ValueError(f"{what}: roots do not yield real coefficients "
                         "(complex roots must occur in conjugate pairs)")
    return vals.real.copy()


def filter_from_roots(rf: RootFactorization) -> Filter:
    """Expand the root factorization into an explicit filter."""
    vals, off = _expand_root_product(rf)
    vals = _realify(vals, "filter_from_roots")
    c0 = rf.resolved_c0()
    return Filter(vals * c0, off)


def truncated_inverse(rf: RootFactorization, r: int) -> Filter:
    """Approximate inverse built from length-r partial geometric sums.

    Each causal factor (1 - p z^-1) contributes sum_{l<r} p^l z^-l, each
    anticausal factor the mirrored sum in z.  The result has support
    length at most r * (#roots) + 1 and composition error against the
    expanded filter governed by the largest root modulus to the power r.
    """
    if r < 1:
        raise ValueError("truncation length r must be >= 1")
    vals = np.array([1.0 + 0.0j])
    off = 0
    for root in rf.minus_roots:
        seg = root ** np.arange(r - 1, -1, -1)  # times -(r-1)..0
        vals = np.convolve(vals, seg)
        off -= r - 1
    for root in rf.plus_roots:
        seg = root ** np.arange(r)  # times 0..r-1
        vals = np.convolve(vals, seg)
    vals = _realify(vals, "truncated_inverse")
    return Filter(vals / rf.resolved_c0(), off)


def truncation_error_closed_form(rf: RootFactorization, r: int) -> float:
    """sqrt of the root-subset sum: prod_k (1 + |s_k|^(2r)) - 1.

    Exact for factorizations whose distinct root subsets land on distinct
    monomials of the composed transform (e.g. any single root, or one
    causal with one anticausal root); same-side multi-root products share
    monomials and pick up cross terms not covered by this form.
    """
    # accumulate prod(1 + x_k) - 1 without forming 1 + x (x can be ~1e-16)
    total = 0.0
    for root in rf.all_roots:
        x = abs(root) ** (2 * r)
        total += x + total * x
    return math.sqrt(max(total, 0.0))


def inverse_error(a: Filter, w: Filter) -> float:
    """l2 norm of a * w - e0 (composition distance to the unit)."""
    return (convolve(a, w) - unit()).norm(2)


def find_roots(a: Filter, max_iter: int = 500, tol: float = 1e-12) -> RootFactorization:
    """Factor a filter into z-transform roots (inverts filter_from_roots).

    Durand-Kerner simultaneous iteration with random-on-circle starts.
    The filter support must already sit at [-N-, N+] for the factor
    counts implied by the root moduli; otherwise the filter is a shifted
    copy of a factorizable one and an explicit shift is required first.
    """
    if len(a) < 2:
        raise ValueError("need a filter of length >= 2 to factor")
    roots = _durand_kerner(a.coeffs, max_iter=max_iter, tol=tol)
    mods = np.abs(roots)
    if np.any(np.abs(mods - 1.0) < _UNIT_CIRCLE_TOL):
        raise RootFindingError("z-transform has a root on the unit circle")
    plus = tuple(roots[mods < 1.0])
    minus = tuple(1.0 / r for r in roots[mods > 1.0])
    n_minus, n_plus = len(minus), len(plus)
    if a.start != -n_minus or a.stop - 1 != n_plus:
        raise ValueError(
            f"support [{a.start},{a.stop - 1}] does not match root counts "
            f"[-{n_minus},{n_plus}]; shift the filter first")
    if n_plus:
        # trailing coefficient: a(N+) = c0 * prod(-p_i)
        denom = 1.0
        for root in plus:
            denom *= -root
        c0 = float((a.coeffs[-1] / denom).real)
    else:
        # no causal factors: a(-N-) = c0 * prod(-m_j)
        denom = 1.0
        for root in minus:
            denom *= -root
        c0 = float((a.coeffs[0] / denom).real)
    rf = RootFactorization(plus_roots=plus, minus_roots=minus, c0=c0)
    rebuilt = filter_from_roots(rf)
    rel = (rebuilt - a).norm(2) / max(a.norm(2), 1e-300)
    if rel > _ROOT_RESIDUAL_TOL:
        raise RootFindingError(f"re-expansion residual {rel:.3e} too large")
    return rf


def _durand_kerner(coeffs: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    """Simultaneous iteration on the polynomial sum_k c_k z^(d-k)."""
    c = np.asarray(coeffs, dtype=complex)
    c = c / c[0]
    d = c.size - 1
    rng = np.random.Generator(np.random.Philox(0x5eed))
    radius = 1.0 + float(np.abs(c).max())
    z = radius * np.exp(2j * np.pi * (rng.random(d) + np.arange(d) / d))
    for _ in range(max_iter):
        pz = np.polyval(c, z)
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, 1.0)
        denom = diff.prod(axis=1)
        step = pz / denom
        z = z - step
        if np.abs(step).max() < tol * (1.0 + np.abs(z).max()):
            break
    else:
        if np.abs(np.polyval(c, z)).max() > 1e-10 * (1.0 + np.abs(c).max()):
            raise RootFindingError("Durand-Kerner did not converge")
    return z


# ---------------------------------------------------------------------------
# scalar functionals
# ---------------------------------------------------------------------------


def deltaness(v: Filter) -> float:
    """Ratio of second-largest to largest absolute entry, in [0, 1]."""
    if v.is_zero:
        raise ValueError("deltaness undefined for the zero filter")
    mags = np.abs(v.coeffs)
    if mags.size == 1:
        return 0.0
    top2 = np.partition(mags, -2)[-2:]
    return float(top2[0] / top2[1])


def peak_index(v: Filter) -> int:
    """Time index of the largest-magnitude entry (smallest index on ties)."""
    if v.is_zero:
        raise ValueError("peak undefined for the zero filter")
    return v.offset + int(np.argmax(np.abs(v.coeffs)))


def angle_to_delta(v: Filter) -> tuple[float, float]:
    """(tan, cot) of the angle between v and the delta at its peak."""
    if v.is_zero:
        raise ValueError("angle undefined for the zero filter")
    mags = np.abs(v.coeffs)
    k = int(np.argmax(mags))
    rest = np.delete(v.coeffs, k)
    tan = float(np.linalg.norm(rest) / mags[k])
    cot = math.inf if tan == 0.0 else 1.0 / tan
    return tan, cot


def wiener_margin(a: Filter, grid: int | None = None) -> tuple[float, float]:
    """(min, max) of |sum_t a_t e^(2 pi i t w)| over a uniform w-grid.

    The max bounds the operator norm of convolution by ``a``; a vanishing
    min signals non-invertibility.  Requires grid >= 2 * len(a).
    """
    if grid is None:
        grid = max(256, 2 * len(a))
    if grid < 2 * len(a):
        raise ValueError("frequency grid must have at least 2*len(a) points")
    t = np.arange(a.start, a.stop)
    omega = np.arange(grid) / grid
    phases = np.exp(2j * np.pi * np.outer(omega, t))
    mags = np.abs(phases @ a.coeffs)
    return float(mags.min()), float(mags.max())


def inverse_filter(a: Filter, tol: float = 1e-12, max_size: int = 1 << 21) -> Filter:
    """Numeric convolution inverse via the reciprocal transfer function.

    Doubles the FFT length until the wrap-around tail falls below ``tol``
    relative to the peak.  Fails for filters whose transform vanishes on
    the unit circle.
    """
    size = 64
    while size < 4 * len(a):
        size *= 2
    while True:
        t = np.arange(a.start, a.stop)
        spec = np.fft.fft(np.bincount(t % size, weights=a.coeffs, minlength=size))
        if np.abs(spec).min() < 1e-9 * np.abs(spec).max():
            raise ValueError("filter is not invertible (transform ~ 0 on the circle)")
        inv = np.fft.ifft(1.0 / spec).real
        half = size // 2
        vals = np.concatenate([inv[half:], inv[:half]])  # times -half .. half-1
        peak = np.abs(vals).max()
        edge = max(np.abs(vals[:size // 16]).max(), np.abs(vals[-size // 16:]).max())
        if edge <= tol * peak:
            keep = np.abs(vals) > 1e-15 * peak
            idx = np.flatnonzero(keep)
            return Filter(vals[idx[0]:idx[-1] + 1], -half + int(idx[0]))
        size *= 2
        if size > max_size:
            raise ValueError("inverse filter does not decay fast enough")
