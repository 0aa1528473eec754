"""STFT analysis/synthesis, mel features, and spectral reconstruction losses.

Frames are centered: frame j of a length-L wave sits at sample j*hop, with
reflect padding at the edges, and L//hop frames total, so a wave of exactly
n token periods maps to a whole number of frames. Synthesis overlap-adds
windowed inverse-DFT frames and divides by the window-square COLA constant,
which makes reconstruction exact on the interior and keeps streaming and
batch synthesis bit-identical.

The DFT is computed with explicit cos/sin basis matmuls so the same code path
runs under autodiff for training losses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .core.tensor import (
    Tensor,
    concat,
    flip_last,
    hypot,
    maximum,
    narrow,
    overlap_add,
    take_last,
)

_BASIS_CACHE: dict = {}


def window_samples(name: str, length: int) -> np.ndarray:
    if name == "hann":
        n = np.arange(length)
        return (0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)).astype(np.float64)
    if name == "rect":
        return np.ones(length, dtype=np.float64)
    raise ValueError(f"unknown window {name!r}")


def cola_scan(window: np.ndarray, hop: int, n_frames: int = 64) -> tuple[float, float]:
    """Interior constancy of sum_n w^2(t - n*hop): (constant, max rel deviation)."""
    n = len(window)
    w2 = window * window
    total = np.zeros((n_frames - 1) * hop + n)
    for j in range(n_frames):
        total[j * hop:j * hop + n] += w2
    interior = total[n:-n]
    c = float(np.median(interior))
    dev = float(np.max(np.abs(interior - c)) / c)
    return c, dev


@dataclass(frozen=True)
class StftConfig:
    fft_size: int
    hop: int
    window: str = "hann"
    synthesis: bool = False   # validate COLA at construction for the ISTFT path

    def __post_init__(self):
        if self.hop <= 0 or self.fft_size <= 0:
            raise ValueError(f"fft_size/hop must be positive, got {self.fft_size}/{self.hop}")
        if self.hop > self.fft_size:
            raise ValueError(f"hop {self.hop} exceeds fft_size {self.fft_size}")
        w = window_samples(self.window, self.fft_size)
        c, dev = cola_scan(w, self.hop)
        cola_ok = dev <= 1e-6
        if self.synthesis and not cola_ok:
            raise ValueError(
                f"window {self.window!r} fft {self.fft_size} hop {self.hop} is not COLA "
                f"(rel deviation {dev:.2e}); unusable for synthesis"
            )
        object.__setattr__(self, "_window", w)
        object.__setattr__(self, "_cola_constant", c if cola_ok else None)

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def window_array(self) -> np.ndarray:
        return self._window

    @property
    def cola_constant(self) -> float | None:
        return self._cola_constant

    def require_cola(self) -> float:
        if self._cola_constant is None:
            raise ValueError(
                f"config fft {self.fft_size} hop {self.hop} window {self.window!r} "
                "does not satisfy COLA; synthesis rejected"
            )
        return self._cola_constant

    def num_frames(self, n_samples: int) -> int:
        return n_samples // self.hop


def _basis(fft_size: int, dtype):
    key = (fft_size, np.dtype(dtype).name)
    if key not in _BASIS_CACHE:
        bins = fft_size // 2 + 1
        n = np.arange(fft_size)[:, None]
        k = np.arange(bins)[None, :]
        ang = 2.0 * np.pi * n * k / fft_size
        fwd_c = np.cos(ang)
        fwd_s = -np.sin(ang)
        # inverse real DFT: x_n = (1/N) sum_k m_k (re_k cos - im_k sin'), m = 2 except DC/Nyquist
        mult = np.full(bins, 2.0)
        mult[0] = 1.0
        if fft_size % 2 == 0:
            mult[-1] = 1.0
        inv_c = (fwd_c * mult / fft_size).T   # [bins, fft]
        inv_s = (fwd_s * mult / fft_size).T
        _BASIS_CACHE[key] = tuple(a.astype(dtype) for a in (fwd_c, fwd_s, inv_c, inv_s))
    return _BASIS_CACHE[key]


# -- framing --------------------------------------------------------------------


def _frame_indices(n_samples: int, cfg: StftConfig) -> np.ndarray:
    f = cfg.num_frames(n_samples)
    return cfg.hop * np.arange(f)[:, None] + np.arange(cfg.fft_size)[None, :]


def _reflect_pad_array(x: np.ndarray, pad: int) -> np.ndarray:
    return np.concatenate([x[..., 1:pad + 1][..., ::-1], x, x[..., -pad - 1:-1][..., ::-1]], axis=-1)


def _reflect_pad_tensor(x: Tensor, pad: int) -> Tensor:
    n = x.shape[-1]
    left = flip_last(narrow(x, -1, 1, pad))
    right = flip_last(narrow(x, -1, n - pad - 1, pad))
    return concat([left, x, right], axis=-1)


def frame_wave(x: Tensor | np.ndarray, cfg: StftConfig):
    """Windowed centered frames [..., F, fft], reflect-padded at the edges."""
    n = x.shape[-1]
    if n < cfg.fft_size:
        raise ValueError(f"wave length {n} shorter than fft_size {cfg.fft_size}")
    pad = cfg.fft_size // 2
    idx = _frame_indices(n, cfg)
    if isinstance(x, Tensor):
        xp = _reflect_pad_tensor(x, pad)
        w = Tensor(cfg.window_array.astype(x.dtype))
        return take_last(xp, idx) * w
    xp = _reflect_pad_array(np.asarray(x), pad)
    return xp[..., idx] * cfg.window_array.astype(x.dtype)


# -- forward transform ------------------------------------------------------------


def stft(wave: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Complex spectrogram [..., frames, fft/2+1]."""
    frames = frame_wave(np.asarray(wave), cfg)
    return np.fft.rfft(frames, axis=-1)


def stft_mag(wave: Tensor | np.ndarray, cfg: StftConfig) -> Tensor:
    """Magnitude spectrogram; silence maps to exact zeros.

    Inputs on the gradient path go through explicit DFT basis matmuls;
    constant inputs take the fft fast path.
    """
    if isinstance(wave, Tensor) and wave.requires_grad:
        frames = frame_wave(wave, cfg)
        fc, fs, _, _ = _basis(cfg.fft_size, wave.dtype)
        re = frames @ Tensor(fc)
        im = frames @ Tensor(fs)
        return hypot(re, im)
    arr = wave.data if isinstance(wave, Tensor) else np.asarray(wave)
    spec = np.fft.rfft(frame_wave(arr, cfg), axis=-1)
    return Tensor(np.abs(spec).astype(arr.dtype))


# -- inverse transform -------------------------------------------------------------


def coeffs_to_frames(coeffs: Tensor, cfg: StftConfig) -> Tensor:
    """Per-frame inverse DFT of stacked (re | im) coefficients.

    coeffs: [..., F, 2*bins] -> windowed, COLA-normalized time frames
    [..., F, fft] ready for overlap-add.
    """
    c = cfg.require_cola()
    bins = cfg.bins
    _, _, ic, isn = _basis(cfg.fft_size, coeffs.dtype)
    re = narrow(coeffs, -1, 0, bins)
    im = narrow(coeffs, -1, bins, bins)
    frames = re @ Tensor(ic) + im @ Tensor(isn)
    w = (cfg.window_array / c).astype(coeffs.dtype)
    return frames * Tensor(w)


def frames_to_wave(frames: Tensor, cfg: StftConfig) -> Tensor:
    """Overlap-add synthesis; output is F*hop samples in analysis alignment."""
    f = frames.shape[-2]
    pad = cfg.fft_size // 2
    buf = overlap_add(frames, cfg.hop, (f - 1) * cfg.hop + cfg.fft_size)
    return narrow(buf, -1, pad, f * cfg.hop)


def istft(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Inverse of `stft`: reconstructs frames*hop samples (interior exact)."""
    cfg.require_cola()
    spec = np.asarray(spec)
    dtype = np.float64 if spec.dtype == np.complex128 else np.float32
    coeffs = np.concatenate([spec.real, spec.imag], axis=-1).astype(dtype)
    return frames_to_wave(coeffs_to_frames(Tensor(coeffs), cfg), cfg).data


# -- mel features -------------------------------------------------------------------


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int
    n_mels: int
    fmin: float
    fmax: float
    stft: StftConfig
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.fmax > self.sample_rate / 2:
            raise ValueError(f"fmax {self.fmax} exceeds Nyquist {self.sample_rate / 2}")
        if not 0 <= self.fmin < self.fmax:
            raise ValueError(f"need 0 <= fmin < fmax, got {self.fmin}, {self.fmax}")
        fb, centers = _mel_filterbank(self)
        if (fb.sum(axis=0) <= 0).any():
            raise ValueError(
                f"{self.n_mels} mel bands cannot all be populated with fft "
                f"{self.stft.fft_size} at sr {self.sample_rate}"
            )
        object.__setattr__(self, "_fb", fb)
        object.__setattr__(self, "_centers", centers)

    @property
    def filterbank(self) -> np.ndarray:
        """[bins, n_mels], every column sums to a positive value."""
        return self._fb

    @property
    def band_centers_hz(self) -> np.ndarray:
        return self._centers

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.stft.hop


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _mel_filterbank(cfg: MelConfig) -> tuple[np.ndarray, np.ndarray]:
    bins = cfg.stft.bins
    freqs = np.arange(bins) * cfg.sample_rate / cfg.stft.fft_size
    pts = _mel_to_hz(np.linspace(_hz_to_mel(cfg.fmin), _hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    fb = np.zeros((bins, cfg.n_mels), dtype=np.float64)
    for m in range(cfg.n_mels):
        lo, mid, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[:, m] = np.maximum(0.0, np.minimum(up, down))
    return fb.astype(np.float32), pts[1:-1]


def mel_spectrogram(wave: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Log mel energies [..., frames, n_mels]: log(floor + power @ filterbank)."""
    spec = stft(np.asarray(wave, dtype=np.float32), cfg.stft)
    power = (spec.real ** 2 + spec.imag ** 2).astype(np.float32)
    return np.log(cfg.log_floor + power @ cfg.filterbank)


def mel_t(wave: Tensor, cfg: MelConfig) -> Tensor:
    """Differentiable log mel energies (same basis as `mel_spectrogram`)."""
    frames = frame_wave(wave, cfg.stft)
    fc, fs, _, _ = _basis(cfg.stft.fft_size, wave.dtype)
    re = frames @ Tensor(fc)
    im = frames @ Tensor(fs)
    power = re * re + im * im
    return (power @ Tensor(cfg.filterbank.astype(wave.dtype)) + float(cfg.log_floor)).log()


# -- losses ---------------------------------------------------------------------------


def _frobenius(x: Tensor) -> Tensor:
    return (x * x).sum().sqrt()


def multiscale_stft_loss(x, y, scales: tuple[StftConfig, ...],
                         return_components: bool = False):
    """Mean over scales of (L1 log-magnitude + normalized spectral convergence).

    Zero iff the magnitude spectrograms match at every scale; blind to sign
    and phase by construction. The convergence term is normalized by the
    larger of the two magnitude norms, so it is symmetric and equals exactly
    1 when one signal is silent.
    """
    if not scales:
        raise ValueError("multiscale_stft_loss needs at least one scale")
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float32))
    if x.shape != y.shape:
        raise ValueError(f"wave shapes differ: {x.shape} vs {y.shape}")
    total = None
    comps = []
    for cfg in scales:
        mx = stft_mag(x, cfg)
        my = stft_mag(y, cfg)
        l1 = ((mx + 1e-5).log() - (my + 1e-5).log()).abs().mean()
        nx, ny = _frobenius(mx), _frobenius(my)
        if float(nx.data) == 0.0 and float(ny.data) == 0.0:
            sc = Tensor(np.zeros((), dtype=x.dtype))
        else:
            sc = _frobenius(mx - my) / maximum(nx, ny)
        comps.append((float(l1.data), float(sc.data)))
        term = l1 + sc
        total = term if total is None else total + term
    loss = total * (1.0 / len(scales))
    if return_components:
        return loss, comps
    return loss


def l1_loss(x: Tensor, y) -> Tensor:
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=x.dtype))
    return (x - y).abs().mean()


# -- wave files -------------------------------------------------------------------------


def write_wave(path, wave: np.ndarray, sample_rate: int, fmt: str = "f32"):
    wave = np.asarray(wave)
    if wave.ndim != 1:
        raise ValueError(f"only mono waves are written, got shape {wave.shape}")
    if fmt == "f32":
        wavfile.write(Path(path), sample_rate, wave.astype(np.float32))
    elif fmt == "i16":
        clipped = np.clip(wave, -1.0, 1.0)
        wavfile.write(Path(path), sample_rate, (clipped * 32767.0).astype(np.int16))
    else:
        raise ValueError(f"unknown wave format {fmt!r}")


def read_wave(path, expect_rate: int | None = None) -> tuple[np.ndarray, int]:
    rate, data = wavfile.read(Path(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: only mono waves are supported, got shape {data.shape}")
    if data.dtype == np.int16:
        wave = data.astype(np.float32) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        wave = data.astype(np.float32)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if expect_rate is not None and rate != expect_rate:
        raise ValueError(f"{path}: sample rate {rate} != expected {expect_rate}")
    return wave, rate
