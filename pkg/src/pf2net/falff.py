"""Sliding-window fALFF features and the subjects x voxels x windows tensor built from them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateFiberError
from .tensor import DenseTensor3


@dataclass
class TimeSeriesSet:
    """Uniformly sampled series, ``values`` of shape (n_series, n_samples)."""

    values: np.ndarray
    sampling_interval: float = 1.0  # seconds per sample

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 2:
            raise ValueError("values must be (n_series, n_samples)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("time series contain non-finite values")
        if not self.sampling_interval > 0:
            raise ValueError("sampling interval must be positive")

    @property
    def n_series(self):
        return self.values.shape[0]

    @property
    def n_samples(self):
        return self.values.shape[1]

    @property
    def sampling_rate(self):
        return 1.0 / self.sampling_interval


@dataclass(frozen=True)
class WindowSpec:
    window: int
    stride: int
    f_lo: float = 0.01
    f_hi: float = 0.08

    def validate(self, n_samples=None, sampling_rate=None):
        if self.window < 1 or self.stride < 1:
            raise ValueError("window and stride must be >= 1")
        if not 0 <= self.f_lo < self.f_hi:
            raise ValueError(f"need 0 <= f_lo < f_hi, got [{self.f_lo}, {self.f_hi}]")
        if sampling_rate is not None and self.f_hi > sampling_rate / 2:
            raise ValueError(f"f_hi={self.f_hi} Hz is above Nyquist ({sampling_rate / 2} Hz)")
        if n_samples is not None and self.window > n_samples:
            raise ValueError(f"window {self.window} longer than the series ({n_samples})")


def sliding_windows(series, spec: WindowSpec) -> np.ndarray:
    """Windows along the last axis at offsets 0, stride, 2*stride, ...

    Returns an array of shape ``(n_windows, *series.shape[:-1], window)``.
    """
    x = np.asarray(series.values if isinstance(series, TimeSeriesSet) else series, dtype=np.float64)
    n = x.shape[-1]
    spec.validate(n_samples=n)
    count = (n - spec.window) // spec.stride + 1
    starts = np.arange(count) * spec.stride
    return np.stack([x[..., s:s + spec.window] for s in starts])


def falff_window(window, spec: WindowSpec, sampling_rate) -> np.ndarray | float:
    """Band amplitude over total amplitude of one window (or a stack, along the last axis).

    Amplitudes are DFT magnitudes; the DC bin is left out of both sums.  A
    window without any non-DC content gives 0.
    """
    x = np.asarray(window, dtype=np.float64)
    n = x.shape[-1]
    if n < 4:
        raise ValueError(f"window must have at least 4 samples, got {n}")
    spec.validate(sampling_rate=sampling_rate)
    amp = np.abs(np.fft.rfft(x, axis=-1))[..., 1:]
    freqs = np.fft.rfftfreq(n, d=1.0 / sampling_rate)[1:]
    band = (freqs >= spec.f_lo) & (freqs <= spec.f_hi)
    total = amp.sum(axis=-1)
    low = amp[..., band].sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(total > 0, low / np.where(total > 0, total, 1.0), 0.0)
    return float(ratio) if ratio.ndim == 0 else ratio


def build_falff_tensor(subjects, spec: WindowSpec, sampling_rate=None) -> DenseTensor3:
    """Subjects x series x windows tensor of windowed fALFF values.

    ``subjects`` holds :class:`TimeSeriesSet` objects or ``(n_series,
    n_samples)`` arrays; ``sampling_rate`` (Hz) defaults to the rate of the
    first TimeSeriesSet.
    """
    subjects = list(subjects)
    if not subjects:
        raise ValueError("no subjects given")
    if sampling_rate is None:
        first = subjects[0]
        if not isinstance(first, TimeSeriesSet):
            raise ValueError("sampling_rate is required for raw arrays")
        sampling_rate = first.sampling_rate
    data = [s.values if isinstance(s, TimeSeriesSet) else np.atleast_2d(np.asarray(s, float)) for s in subjects]
    shapes = {d.shape for d in data}
    if len(shapes) != 1:
        raise ValueError(f"subjects differ in (series, samples) shape: {sorted(shapes)}")
    stacked = np.stack(data)  # (I, J, n_samples)
    windows = sliding_windows(stacked, spec)  # (K, I, J, window)
    return DenseTensor3(falff_window(windows, spec, sampling_rate))


def preprocess_tensor(T: DenseTensor3, centering="fiber") -> DenseTensor3:
    """Center and scale every voxel-mode fiber ``T[i, :, k]``.

    ``centering="fiber"`` subtracts each fiber's own mean over voxels;
    ``centering="global"`` subtracts one voxel-wise mean map taken over all
    subjects and windows.  Each fiber is then divided by its 2-norm.
    """
    X = T.slices  # (K, I, J): fibers run along the last axis
    if centering == "fiber":
        Xc = X - X.mean(axis=2, keepdims=True)
    elif centering == "global":
        Xc = X - X.mean(axis=(0, 1), keepdims=True)
    else:
        raise ValueError(f"centering must be 'fiber' or 'global', got {centering!r}")
    norms = np.linalg.norm(Xc, axis=2)
    scale = np.abs(X).max(axis=2)
    degenerate = norms <= 1e-12 * np.maximum(scale, np.finfo(float).tiny)
    if np.any(degenerate):
        k, i = np.argwhere(degenerate)[0]
        raise DegenerateFiberError(int(i), int(k))
    return DenseTensor3(Xc / norms[..., None])
