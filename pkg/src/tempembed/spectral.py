"""Discrete Fourier analysis of tile series and square spectrogram construction."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import _binio
from .errors import DomainError, InfeasiblePlanError
from .ingest import TileSeries, TimeSpec
from .tile_geo import TileId

SPEC_MAGIC = b"SPEC"
SPEC_VERSION = 1
WINDOWS = ("hann", "rect")


@dataclass(frozen=True)
class DftVector:
    values: np.ndarray
    source_spec: TimeSpec | None = None


@dataclass(frozen=True)
class HarmonicFrequency:
    k: int
    hertz: float


@dataclass(frozen=True)
class SpectrogramPlan:
    window_len: int
    stride: int

    @property
    def side(self) -> int:
        return (self.window_len + 1) // 2

    def series_length(self) -> int:
        """The unique T this plan is square for."""
        return self.window_len + self.stride * (self.side - 1)

    def check(self, T: int) -> None:
        W, s = self.window_len, self.stride
        if W < 1 or W % 2 == 0 or s < 1:
            raise DomainError(f"plan needs odd W >= 1 and s >= 1, got W={W}, s={s}")
        if W > T or (T - W) % s or (T - W) // s + 1 != self.side:
            raise DomainError(f"plan W={W}, s={s} does not give a square spectrogram for T={T}")


@dataclass(frozen=True)
class Spectrogram:
    tile: TileId | None
    matrix: np.ndarray
    normalization: dict = field(default_factory=dict)


def dft_direct(x) -> np.ndarray:
    """O(T^2) evaluation of X_k = sum_t x_t exp(-2 pi i k t / T), term by term."""
    x = np.asarray(x, dtype=np.complex128)
    T = len(x)
    t = np.arange(T)
    out = np.empty(T, dtype=np.complex128)
    for k in range(T):
        # (k*t) mod T keeps the phase argument small for large T.
        out[k] = np.sum(x * np.exp(-2j * np.pi * ((k * t) % T) / T))
    return out


def dft(series, spec: TimeSpec | None = None) -> DftVector:
    x = np.asarray(series)
    if x.ndim != 1 or x.size == 0:
        raise DomainError(f"dft needs a non-empty 1-D series, got shape {x.shape}")
    values = np.fft.fft(x.astype(np.float64))
    # The DC term is the plain sum; pin it so it is exact for integer input.
    if np.issubdtype(x.dtype, np.integer):
        values[0] = float(int(x.astype(np.int64).sum()))
    else:
        values[0] = math.fsum(x.tolist())
    return DftVector(values, spec)


def amplitude_spectrum(d: DftVector) -> np.ndarray:
    return np.abs(d.values)


def harmonic(k: int, spec: TimeSpec) -> HarmonicFrequency:
    if not 0 <= k < spec.num_bins:
        raise DomainError(f"harmonic index {k} outside [0, {spec.num_bins})")
    return HarmonicFrequency(k, k / (spec.num_bins * spec.delta_t))


def _stride_for(T, W):
    """Stride making W square for length T, or None."""
    if W > T:
        return None
    half = (W - 1) // 2
    if half == 0:
        return 1 if T == W else None
    if (T - W) % half:
        return None
    s = (T - W) // half
    return s if s >= 1 else None


def feasible(T: int) -> bool:
    return any(_stride_for(T, W) is not None for W in range(1, T + 1, 2))


def plan_square_spectrogram(T: int) -> SpectrogramPlan:
    """Largest odd window W (and its stride) with (W+1)/2 == (T-W)/s + 1.

    For a given W the stride is unique, so preferring the largest W settles
    every tie.
    """
    if T < 1:
        raise DomainError(f"series length must be positive, got {T}")
    top = T if T % 2 else T - 1
    for W in range(top, 0, -2):
        s = _stride_for(T, W)
        if s is not None:
            return SpectrogramPlan(W, s)
    nearest = min((c for c in range(max(1, T - 8), T + 9) if c != T and feasible(c)),
                  key=lambda c: (abs(c - T), c))
    raise InfeasiblePlanError(f"no square spectrogram plan for T={T}; nearest feasible length is {nearest}")


def window(kind: str, W: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(W)
    if kind == "hann":
        # Periodic Hann: the DFT-even form used for spectral analysis.
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(W) / W)
    raise DomainError(f"unknown window function {kind!r}; choose from {WINDOWS}")


def spectrogram_matrix(counts, plan: SpectrogramPlan, window_fn: str = "hann") -> np.ndarray:
    x = np.asarray(counts, dtype=np.float64)
    plan.check(len(x))
    n, W, s = plan.side, plan.window_len, plan.stride
    idx = np.arange(n)[:, None] * s + np.arange(W)[None, :]
    frames = x[idx] * window(window_fn, W)[None, :]
    return np.abs(np.fft.fft(frames, axis=1)[:, :n])


def spectrogram(series: TileSeries, plan: SpectrogramPlan, window_fn: str = "hann") -> Spectrogram:
    """Rows are windows, columns are frequency bins 0..(W-1)/2."""
    return Spectrogram(series.tile, spectrogram_matrix(series.counts, plan, window_fn),
                       {"window": window_fn, "window_len": plan.window_len, "stride": plan.stride})


def normalize_matrix(m: np.ndarray) -> tuple[np.ndarray, float, float]:
    v = np.log1p(np.asarray(m, dtype=np.float64))
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros_like(v), lo, hi
    return (v - lo) / (hi - lo), lo, hi


def normalize_spectrogram(spec: Spectrogram, mode: str = "log-minmax") -> Spectrogram:
    if mode != "log-minmax":
        raise DomainError(f"unknown normalization mode {mode!r}")
    out, lo, hi = normalize_matrix(spec.matrix)
    meta = dict(spec.normalization, mode=mode, log_min=lo, log_max=hi)
    return replace(spec, matrix=out, normalization=meta)


def denormalize_spectrogram(spec: Spectrogram) -> Spectrogram:
    meta = spec.normalization
    if meta.get("mode") != "log-minmax":
        raise DomainError("spectrogram carries no log-minmax metadata")
    lo, hi = meta["log_min"], meta["log_max"]
    raw = np.expm1(spec.matrix * (hi - lo) + lo)
    rest = {k: v for k, v in meta.items() if k not in ("mode", "log_min", "log_max")}
    return replace(spec, matrix=raw, normalization=rest)


def save_spectrograms(specs, path) -> None:
    specs = list(specs)
    side = specs[0].matrix.shape[0] if specs else 0
    with open(path, "wb") as fh:
        fh.write(SPEC_MAGIC)
        fh.write(struct.pack("<HIQ", SPEC_VERSION, side, len(specs)))
        for sp in specs:
            if sp.matrix.shape != (side, side):
                raise DomainError(f"spectrogram for {sp.tile} has shape {sp.matrix.shape}, batch side is {side}")
            t = sp.tile or TileId(0, 0, 0)
            fh.write(_binio.TILE.pack(t.zoom, t.x, t.y))
            fh.write(np.ascontiguousarray(sp.matrix, dtype="<f4").tobytes())


def load_spectrograms(path) -> list[Spectrogram]:
    with open(path, "rb") as fh:
        r = _binio.Reader(fh.read(), f"spectrogram file {path}")
    r.magic(SPEC_MAGIC)
    r.version(SPEC_VERSION)
    side, count = r.unpack("<IQ")
    out = []
    for _ in range(count):
        zoom, x, y = r.unpack("<BII")
        m = np.frombuffer(r.take(4 * side * side), dtype="<f4").reshape(side, side).astype(np.float64)
        out.append(Spectrogram(TileId(zoom, x, y), m))
    r.done()
    return out
