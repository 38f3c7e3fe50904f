"""Complex linear algebra and AR spectral estimation shared by the
dereverberation algorithms.

All functions here are pure and reentrant; they can be called concurrently
from per-bin workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import NumericalError

DEFAULT_AR_ORDER = 21
REFLECTION_CLAMP = 1.0 - 1e-6


def relative_ridge(a: np.ndarray) -> float:
    """Scale-invariant default ridge for covariance inversions:
    1e-6 * trace(A) / dim(A)."""
    n = a.shape[-1]
    return 1e-6 * float(np.trace(a).real) / n


def hermitian_solve(a: np.ndarray, b: np.ndarray, ridge: float | None = None) -> np.ndarray:
    """Solve (A + ridge*I) X = B for Hermitian A.

    ridge=None applies the relative default ridge; pass 0.0 to disable.
    Raises NumericalError("singular system") with a condition estimate when
    the ridged system is still numerically unusable.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("A must be square")
    if ridge is None:
        ridge = relative_ridge(a)
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    m = a + ridge * np.eye(a.shape[0], dtype=a.dtype if np.iscomplexobj(a) else float)
    try:
        x = np.linalg.solve(m, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"singular system (cond~{_cond_estimate(m):.3e})"
        ) from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"singular system (cond~{_cond_estimate(m):.3e})")
    return x


def _cond_estimate(m: np.ndarray) -> float:
    try:
        return float(np.linalg.cond(m))
    except np.linalg.LinAlgError:
        return float("inf")


@dataclass
class ArModel:
    """Autoregressive model of a quasi-stationary frame.

    ``coefficients`` are the predictor taps a_1..a_Q of the synthesis filter
    1 / (1 - sum_q a_q z^-q); ``gain`` is the final prediction error power.
    ``clamped`` flags a non-positive-definite autocorrelation whose
    reflection coefficient was clamped.
    """

    order: int
    coefficients: np.ndarray
    gain: float
    clamped: bool = field(default=False)


def levinson_durbin(autocorr: np.ndarray, order: int | None = None) -> ArModel:
    """Levinson-Durbin recursion on an autocorrelation sequence r[0..Q].

    Accepts real or complex autocorrelations. Reflection coefficients with
    magnitude >= 1 (non-PD sequence) are clamped to 1-1e-6 and flagged
    instead of failing; r[0] <= 0 raises NumericalError.
    """
    r = np.asarray(autocorr)
    if order is None:
        order = len(r) - 1
    if len(r) < order + 1:
        raise ValueError("autocorrelation shorter than order+1")
    if r[0].real <= 0:
        raise NumericalError("degenerate autocorrelation")

    complex_input = np.iscomplexobj(r)
    a = np.zeros(order, dtype=complex)
    err = float(r[0].real)
    clamped = False
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        k = acc / err
        if abs(k) >= 1.0:
            k = k / abs(k) * REFLECTION_CLAMP
            clamped = True
        a_new = a.copy()
        a_new[i] = k
        if i > 0:
            a_new[:i] = a[:i] - k * np.conj(a[i - 1 :: -1])
        a = a_new
        err *= 1.0 - float(abs(k) ** 2)
    if not complex_input:
        a = a.real
    return ArModel(order=order, coefficients=a, gain=err, clamped=clamped)


def ar_psd_frame(frame_spectrum: np.ndarray, order: int = DEFAULT_AR_ORDER) -> np.ndarray:
    """Per-frame AR power spectrum from a frame's STFT bins.

    The autocorrelation is the inverse DFT of the Hermitian-extended
    periodogram; the AR fit goes through levinson_durbin and the returned
    spectrum is the squared magnitude response of the synthesis filter,
    floored at a relative epsilon so silent frames stay strictly positive.

    ``frame_spectrum`` may be the K/2+1 nonnegative-frequency bins of a
    K-point transform (the usual case) or a full even-length K spectrum.
    The returned vector matches the input length.
    """
    spec = np.asarray(frame_spectrum)
    n = len(spec)
    if n % 2 == 1:
        nfft = 2 * (n - 1)
        half = np.abs(spec) ** 2
    else:
        nfft = n
        # fold the full spectrum onto nonnegative bins; the periodogram of a
        # real frame is already symmetric so this is a symmetrization
        p = np.abs(spec) ** 2
        half = np.empty(nfft // 2 + 1)
        half[0] = p[0]
        half[-1] = p[nfft // 2]
        half[1:-1] = 0.5 * (p[1 : nfft // 2] + p[-1 : nfft // 2 : -1])
    if order >= nfft // 2:
        raise ValueError("AR order must be < K/2")

    floor = 1e-10 * (float(np.mean(half)) + 1e-20)
    r = np.fft.irfft(half, n=nfft)
    gamma_half = ar_psd_from_autocorr(r, nfft, order, floor)
    if n % 2 == 1:
        return gamma_half
    full = np.empty(nfft)
    full[: nfft // 2 + 1] = gamma_half
    full[nfft // 2 + 1 :] = gamma_half[-2:0:-1]
    return full


def ar_psd_from_autocorr(r: np.ndarray, nfft: int, order: int, floor: float) -> np.ndarray:
    """AR power spectrum on the nonnegative bins of an nfft-point grid,
    from an autocorrelation sequence; floored to stay strictly positive."""
    if r[0] <= 0:
        return np.full(nfft // 2 + 1, floor)
    model = levinson_durbin(r[: order + 1])
    # |A(e^{-j w_k})|^2 with A(z) = 1 - sum a_q z^-q
    a_poly = np.zeros(nfft)
    a_poly[0] = 1.0
    a_poly[1 : order + 1] = -model.coefficients
    denom = np.abs(np.fft.rfft(a_poly)) ** 2
    return np.maximum(model.gain / np.maximum(denom, 1e-300), floor)
