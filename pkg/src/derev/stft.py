"""Multichannel STFT analysis and weighted overlap-add synthesis.

Framing follows the experimental setup used throughout the package:
32 ms periodic Hann window, 75% overlap, FFT size equal to the window.
Only the K/2+1 nonnegative-frequency bins are stored; the mirror bins are
restored at synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ConfigError


def hann_periodic(n: int) -> np.ndarray:
    """Periodic Hann window (COLA-exact at 75% overlap, unlike the
    symmetric variant)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    window_len: int = 512
    hop: int = 128
    fft_size: int = 512

    def __post_init__(self):
        if self.window_len % self.hop != 0:
            raise ConfigError("hop must divide window_len")
        if self.fft_size < self.window_len:
            raise ConfigError("fft_size must be >= window_len")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def frame_time(self, n: int) -> float:
        """Start time in seconds of frame n."""
        return n * self.hop / self.sample_rate


@dataclass
class StftTensor:
    """Complex spectrogram stack indexed [frame n, bin k, mic m]."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.data.ndim == 2:  # single channel convenience
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ConfigError("StftTensor data must be (frames, bins, mics)")
        if self.data.shape[1] != self.config.bins:
            raise ConfigError(
                f"bin count {self.data.shape[1]} != K/2+1 = {self.config.bins}"
            )

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    @property
    def mics(self) -> int:
        return self.data.shape[2]


def _as_channel_matrix(signal: np.ndarray) -> np.ndarray:
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ConfigError("signal must be (samples,) or (samples, channels)")
    return x


def analyze(signal: np.ndarray, config: StftConfig | None = None) -> StftTensor:
    """Hann-windowed DFT per channel; frame n covers samples
    [n*hop, n*hop + window_len). The last frames are zero-padded so every
    sample is covered."""
    config = config or StftConfig()
    x = _as_channel_matrix(signal)
    nsamp, nch = x.shape
    w, hop, k = config.window_len, config.hop, config.fft_size
    if nsamp < w:
        raise ConfigError("insufficient samples for one analysis window")
    nframes = int(np.ceil((nsamp - w) / hop)) + 1
    padded = np.zeros(((nframes - 1) * hop + w, nch))
    padded[:nsamp] = x
    window = hann_periodic(w)
    idx = np.arange(w)[None, :] + hop * np.arange(nframes)[:, None]
    frames = padded[idx, :] * window[None, :, None]
    spec = np.fft.rfft(frames, n=k, axis=1)
    return StftTensor(data=spec, config=config)


def synthesize(tensor: StftTensor, num_samples: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse with the dual (normalized) window.

    Round-trips analyze() exactly on samples at least one window length away
    from both signal ends. Returns (samples, mics); pass num_samples to
    truncate or zero-extend to a target length.
    """
    config = tensor.config
    w, hop, k = config.window_len, config.hop, config.fft_size
    nframes, _, nch = tensor.data.shape
    window = hann_periodic(w)
    frames = np.fft.irfft(tensor.data, n=k, axis=1)[:, :w, :]
    frames *= window[None, :, None]
    total = (nframes - 1) * hop + w
    out = np.zeros((total, nch))
    norm = np.zeros(total)
    wsq = window**2
    for n in range(nframes):
        out[n * hop : n * hop + w] += frames[n]
        norm[n * hop : n * hop + w] += wsq
    norm = np.maximum(norm, 1e-12)
    out /= norm[:, None]
    if num_samples is not None:
        trimmed = np.zeros((num_samples, nch))
        take = min(num_samples, total)
        trimmed[:take] = out[:take]
        out = trimmed
    return out
