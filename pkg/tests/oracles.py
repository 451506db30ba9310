"""Independent reference computations used by the tests.

Nothing here imports the package's DSP or autodiff internals: these are the
brute-force counterparts the implementation is checked against.
"""

from __future__ import annotations

import math

import numpy as np


def tone(freq_hz: float, sr: int, n: int, amp: float = 0.5, phase: float = 0.0) -> np.ndarray:
    return amp * np.sin(2.0 * np.pi * freq_hz * np.arange(n) / sr + phase)


def peak_frequency(x: np.ndarray, sr: int, pad: int = 8) -> float:
    """Dominant frequency by zero-padded Hann FFT and parabolic peak interpolation."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    spec = np.abs(np.fft.rfft(x * np.hanning(n), n=pad * n))
    k = int(np.argmax(spec[1:-1])) + 1
    a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
    delta = 0.5 * (a - c) / (a - 2 * b + c) if (a - 2 * b + c) != 0 else 0.0
    return (k + delta) * sr / (pad * n)


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Normalised cross-correlation at lag 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / math.sqrt((a @ a) * (b @ b)))


def snr_db(clean: np.ndarray, observed: np.ndarray) -> float:
    err = np.asarray(observed) - np.asarray(clean)
    return 10.0 * math.log10(float(np.mean(clean ** 2)) / float(np.mean(err ** 2)))


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix written out from the cosine definition."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * math.sqrt(2.0 / n)
    m[0] /= math.sqrt(2.0)
    return m


def dft_frame(frame: np.ndarray, n_fft: int) -> np.ndarray:
    """Brute-force DFT of one real frame, non-negative frequencies only."""
    x = np.zeros(n_fft)
    x[:frame.size] = frame
    k = np.arange(n_fft // 2 + 1)[:, None]
    t = np.arange(n_fft)[None, :]
    return (x[None, :] * np.exp(-2j * np.pi * k * t / n_fft)).sum(axis=1)


def population_std(values) -> float:
    v = [float(x) for x in values]
    mu = sum(v) / len(v)
    return math.sqrt(sum((x - mu) ** 2 for x in v) / len(v))


def gradient_error(forward, tensors, seed: int = 0, eps: float = 1e-4, scale_floor: float = 1e-6) -> float:
    """Largest relative deviation between analytic and central-difference gradients.

    ``forward()`` returns an output tensor; it is reduced to a scalar through a
    fixed random projection so every output element contributes. The error
    for the whole set of ``tensors`` is max|numeric - analytic| divided by the
    largest gradient magnitude in the set (never below ``scale_floor``).
    Tensors whose true gradient vanishes identically are therefore judged in
    absolute terms against the layer's gradient scale.
    """
    rng = np.random.default_rng(seed)
    out = forward()
    proj = rng.normal(size=out.shape)
    for t in tensors:
        t.grad = None
    (out * proj).sum().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else np.array(t.grad) for t in tensors]
    numeric = []
    for t in tensors:
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float(np.sum(forward().data * proj))
            flat[i] = old - eps
            fm = float(np.sum(forward().data * proj))
            flat[i] = old
            num.reshape(-1)[i] = (fp - fm) / (2.0 * eps)
        numeric.append(num)
    scale = max(max(float(np.max(np.abs(a))) for a in analytic),
                max(float(np.max(np.abs(n))) for n in numeric), scale_floor)
    return max(float(np.max(np.abs(a - n))) for a, n in zip(analytic, numeric)) / scale
