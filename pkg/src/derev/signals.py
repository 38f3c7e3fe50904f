"""Test-signal synthesis and WAV file I/O.

The synthetic speech generator produces a deterministic, speech-like signal
(formant-filtered glottal pulses with syllabic rhythm and unvoiced bursts)
so the toolkit can be exercised and evaluated without a speech corpus. Any
mono 16 kHz speech WAV can be used instead.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import lfilter

from . import ConfigError

# rough vowel formant table (F1..F3 in Hz) and bandwidths
_VOWELS = [
    (730.0, 1090.0, 2440.0),
    (270.0, 2290.0, 3010.0),
    (300.0, 870.0, 2240.0),
    (660.0, 1720.0, 2410.0),
    (530.0, 1840.0, 2480.0),
    (390.0, 1990.0, 2550.0),
]
_BANDWIDTHS = (90.0, 110.0, 160.0)


def _resonator(freq: float, bw: float, fs: float) -> tuple[np.ndarray, np.ndarray]:
    r = np.exp(-np.pi * bw / fs)
    theta = 2.0 * np.pi * freq / fs
    b = np.array([1.0 - r])
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return b, a


def synthetic_speech(
    duration: float,
    sample_rate: int = 16000,
    rng: np.random.Generator | int | None = 0,
) -> np.ndarray:
    """Deterministic speech-like test signal.

    Voiced syllables are glottal pulse trains shaped by a random vowel's
    formant resonators; some syllables are unvoiced noise bursts and some
    are short pauses. A -70 dB noise floor keeps frames off digital zero.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    fs = sample_rate
    nsamp = int(round(duration * fs))
    out = np.zeros(nsamp)
    f0_base = rng.uniform(95.0, 190.0)

    # syllables overlap by one ramp so energy dips stay shallow, like read
    # speech; occasional short pauses only
    ramp = int(0.04 * fs)
    pos = 0
    first = True
    while pos < nsamp - ramp:
        seg_len = int(rng.uniform(0.14, 0.3) * fs)
        seg_len = min(seg_len, nsamp - pos)
        kind = rng.uniform()
        if not first and kind < 0.06:
            pos += int(rng.uniform(0.04, 0.09) * fs)  # pause
            continue
        seg = np.zeros(seg_len)
        if first or kind < 0.8:
            # voiced: jittered pulse train through formant cascade
            f0 = f0_base * rng.uniform(0.85, 1.2)
            t = 0.0
            while t < seg_len:
                it = int(t)
                seg[it] = 1.0
                t += fs / (f0 * (1.0 + 0.02 * rng.standard_normal()))
            seg = lfilter([1.0], [1.0, -0.96], seg)  # glottal tilt
            formants = _VOWELS[rng.integers(len(_VOWELS))]
            for freq, bw in zip(formants, _BANDWIDTHS):
                b, a = _resonator(freq, bw, fs)
                seg = lfilter(b, a, seg)
        else:
            # unvoiced burst: shaped noise
            seg = rng.standard_normal(seg_len)
            b, a = _resonator(rng.uniform(2200.0, 4200.0), 900.0, fs)
            seg = lfilter(b, a, seg) * 0.4
        env = np.ones(seg_len)
        r = min(ramp, seg_len // 2)
        env[:r] = np.linspace(0.0, 1.0, r)
        env[-r:] = np.linspace(1.0, 0.0, r)
        rms = np.sqrt(np.mean(seg**2)) + 1e-12
        seg = seg / rms * rng.uniform(0.55, 1.0)
        out[pos : pos + seg_len] += seg * env
        pos += seg_len - r  # overlap the fade-out with the next onset
        first = False

    out += 10 ** (-65.0 / 20.0) * rng.standard_normal(nsamp)
    peak = np.max(np.abs(out))
    return out / peak * 0.5


def read_wav(path: str | Path) -> tuple[int, np.ndarray]:
    """Read a WAV file to float64 in [-1, 1]; returns (sample_rate, samples)
    with samples shaped (n,) mono or (n, channels)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such file: {path}")
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    return rate, data


def write_wav(path: str | Path, rate: int, data: np.ndarray, pcm16: bool = False) -> None:
    """Write mono or multichannel audio; float32 by default, 16-bit PCM on
    request."""
    data = np.asarray(data)
    if pcm16:
        clipped = np.clip(data, -1.0, 1.0 - 1.0 / 32768.0)
        wavfile.write(str(path), rate, (clipped * 32768.0).astype(np.int16))
    else:
        wavfile.write(str(path), rate, data.astype(np.float32))
