"""Hot numeric kernels used by the metrics and adversary modules.

Each kernel exists twice: a numba-compiled loop (``*_nb``) and a vectorised
numpy path (``*_np``). The public name points at one of them depending on
``semhide._accel.USE_NUMBA``. Both paths are tested for agreement.
"""

import numpy as np

from ._accel import USE_NUMBA, njit


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


# --------------------------------------------------------------------------
# SSIM over a stack of 2-D frames, "valid" separable Gaussian filtering.


@njit(cache=True)
def _filter_valid_nb(img, taps):
    k = taps.shape[0]
    h, w = img.shape
    ho, wo = h - k + 1, w - k + 1
    tmp = np.zeros((h, wo))
    for i in range(h):
        for j in range(wo):
            acc = 0.0
            for t in range(k):
                acc += taps[t] * img[i, j + t]
            tmp[i, j] = acc
    out = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            acc = 0.0
            for t in range(k):
                acc += taps[t] * tmp[i + t, j]
            out[i, j] = acc
    return out


@njit(cache=True)
def ssim_frames_nb(x, y, taps, c1, c2):
    n = x.shape[0]
    out = np.zeros(n)
    for f in range(n):
        a = x[f]
        b = y[f]
        mu_a = _filter_valid_nb(a, taps)
        mu_b = _filter_valid_nb(b, taps)
        s_aa = _filter_valid_nb(a * a, taps) - mu_a * mu_a
        s_bb = _filter_valid_nb(b * b, taps) - mu_b * mu_b
        s_ab = _filter_valid_nb(a * b, taps) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * s_ab + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
        out[f] = np.mean(num / den)
    return out


def _filter_valid_np(img, taps):
    # img: (n, h, w)
    k = taps.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, k, axis=2)
    tmp = win @ taps
    win = np.lib.stride_tricks.sliding_window_view(tmp, k, axis=1)
    return win @ taps


def ssim_frames_np(x, y, taps, c1, c2):
    mu_a = _filter_valid_np(x, taps)
    mu_b = _filter_valid_np(y, taps)
    s_aa = _filter_valid_np(x * x, taps) - mu_a * mu_a
    s_bb = _filter_valid_np(y * y, taps) - mu_b * mu_b
    s_ab = _filter_valid_np(x * y, taps) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return (num / den).mean(axis=(1, 2))


# --------------------------------------------------------------------------
# Exact ROC sweep. Tied scores form a single operating point.


@njit(cache=True)
def _roc_scan_nb(s, lab):
    n = s.shape[0]
    n_pos = 0
    for i in range(n):
        if lab[i]:
            n_pos += 1
    n_neg = n - n_pos
    fpr = np.zeros(n + 1)
    tpr = np.zeros(n + 1)
    thr = np.empty(n + 1)
    thr[0] = np.inf
    tp = 0
    fp = 0
    m = 1
    for i in range(n):
        if lab[i]:
            tp += 1
        else:
            fp += 1
        if i == n - 1 or s[i + 1] != s[i]:
            tpr[m] = tp / n_pos
            fpr[m] = fp / n_neg
            thr[m] = s[i]
            m += 1
    return fpr[:m], tpr[:m], thr[:m]


def roc_sweep_nb(scores, labels):
    # numpy's sort beats numba's; only the scan is compiled
    order = np.argsort(-scores, kind="mergesort")
    return _roc_scan_nb(scores[order], labels[order])


def roc_sweep_np(scores, labels):
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    lab = labels[order].astype(np.int64)
    tp = np.cumsum(lab)
    fp = np.cumsum(1 - lab)
    last = np.r_[s[1:] != s[:-1], True]
    n_pos, n_neg = tp[-1], fp[-1]
    fpr = np.r_[0.0, fp[last] / n_neg]
    tpr = np.r_[0.0, tp[last] / n_pos]
    thr = np.r_[np.inf, s[last]]
    return fpr, tpr, thr


@njit(cache=True)
def trapezoid_nb(y, x):
    acc = 0.0
    for i in range(1, x.shape[0]):
        acc += (x[i] - x[i - 1]) * (y[i] + y[i - 1]) * 0.5
    return acc


def trapezoid_np(y, x):
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


# --------------------------------------------------------------------------
# 1-D Wasserstein-1 between equal-size empirical distributions.


@njit(cache=True)
def _mean_abs_diff_nb(sa, sb):
    acc = 0.0
    for i in range(sa.shape[0]):
        acc += abs(sa[i] - sb[i])
    return acc / sa.shape[0]


def w1_sorted_nb(a, b):
    return _mean_abs_diff_nb(np.sort(a), np.sort(b))


def w1_sorted_np(a, b):
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


if USE_NUMBA:
    ssim_frames = ssim_frames_nb
    roc_sweep = roc_sweep_nb
    trapezoid = trapezoid_nb
    w1_sorted = w1_sorted_nb
else:
    ssim_frames = ssim_frames_np
    roc_sweep = roc_sweep_np
    trapezoid = trapezoid_np
    w1_sorted = w1_sorted_np

BACKEND = "numba" if USE_NUMBA else "numpy"
