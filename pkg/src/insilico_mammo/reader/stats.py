"""AUC, fully-crossed MRMC variance and image moments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..errors import DegenerateLabelsError, DesignError

Z95 = 1.959963984540054


def _split(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise DesignError(f"scores {s.shape} and labels {y.shape} differ in shape")
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateLabelsError("AUC needs both signal-present and signal-absent cases")
    return pos, neg


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted 1/2."""
    pos, neg = _split(scores, labels)
    ranks = rankdata(np.concatenate([pos, neg]))
    n1, n0 = len(pos), len(neg)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def success_matrices(scores, labels) -> np.ndarray:
    """psi(pos_i, neg_j) per reader: array (R, n1, n0) with values in {0, 1/2, 1}."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.ndim != 2 or s.shape[1] != len(y):
        raise DesignError("score matrix must be readers x cases and match the labels")
    if not np.all(np.isfinite(s)):
        raise DesignError("score matrix has missing or non-finite entries")
    pos, neg = s[:, y == 1], s[:, y == 0]
    d = pos[:, :, None] - neg[:, None, :]
    return (d > 0) + 0.5 * (d == 0)


def mrmc_moments(S: np.ndarray) -> np.ndarray:
    """The eight U-statistic moments M1..M8 of a fully-crossed success array.

    M1-M4 pair a reader with itself, M5-M8 pair distinct readers; within
    each group the pairs share (pos, neg), pos only, neg only, or nothing.
    """
    R, n1, n0 = S.shape
    S2 = S * S
    row = S.sum(axis=2)  # (R, n1)
    col = S.sum(axis=1)  # (R, n0)
    tot = S.sum(axis=(1, 2))
    sq = S2.sum(axis=(1, 2))

    def same_reader():
        m1 = sq.sum() / (R * n1 * n0)
        m2 = ((row**2).sum() - sq.sum()) / (R * n1 * n0 * (n0 - 1))
        m3 = ((col**2).sum() - sq.sum()) / (R * n0 * n1 * (n1 - 1))
        m4 = ((tot**2).sum() - (row**2).sum() - (col**2).sum() + sq.sum()) / (
            R * n1 * (n1 - 1) * n0 * (n0 - 1))
        return m1, m2, m3, m4

    T = S.sum(axis=0)
    Trow, Tcol, Ttot = T.sum(axis=1), T.sum(axis=0), T.sum()
    rr = R * (R - 1)
    # cross-reader sums: sum over r != r' = (sum over all r, r') - (r == r')
    x_ij = (T * T).sum() - sq.sum()
    x_i = (Trow**2).sum() - (row**2).sum()
    x_j = (Tcol**2).sum() - (col**2).sum()
    x_all = Ttot**2 - (tot**2).sum()
    m5 = x_ij / (rr * n1 * n0)
    m6 = (x_i - x_ij) / (rr * n1 * n0 * (n0 - 1))
    m7 = (x_j - x_ij) / (rr * n0 * n1 * (n1 - 1))
    m8 = (x_all - x_i - x_j + x_ij) / (rr * n1 * (n1 - 1) * n0 * (n0 - 1))
    return np.array([*same_reader(), m5, m6, m7, m8])


def _coefficients(R, n1, n0):
    base = np.array([1.0, n0 - 1, n1 - 1, (n1 - 1) * (n0 - 1)])
    return np.concatenate([base, (R - 1) * base]) / (R * n1 * n0)


def _bootstrap_coefficients(R, n1, n0):
    """Probability that two resampled index tuples share reader/pos/neg indices."""
    def same(n):
        return (2 * n - 1) / n**2
    p = []
    for pr in (same(R), 1 - same(R)):
        for pi, pj in ((same(n1), same(n0)), (same(n1), 1 - same(n0)),
                       (1 - same(n1), same(n0)), (1 - same(n1), 1 - same(n0))):
            p.append(pr * pi * pj)
    return np.array(p)


@dataclass(frozen=True)
class MRMCResult:
    auc: float
    variance: float
    ci: tuple[float, float]
    reader_aucs: tuple[float, ...]
    reader_variance: float  # contribution of reader sampling to the pooled variance
    moments: tuple[float, ...]
    method: str = "u-statistic"

    @property
    def half_width(self) -> float:
        return (self.ci[1] - self.ci[0]) / 2


def mrmc_ci(scores, labels) -> MRMCResult:
    """Pooled AUC over readers with a fully-crossed U-statistic variance.

    Falls back to the bootstrap-equivalent (MLE) moments when the unbiased
    estimate is negative.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2:
        raise DesignError("MRMC analysis needs at least two readers")
    S = success_matrices(s, labels)
    R, n1, n0 = S.shape
    if n1 < 2 or n0 < 2:
        raise DesignError("MRMC analysis needs at least two cases per class")
    M = mrmc_moments(S)
    reader_aucs = S.mean(axis=(1, 2))
    pooled = float(reader_aucs.mean())
    var = float(_coefficients(R, n1, n0) @ M - M[7])
    method = "u-statistic"
    if var < 0:
        var = float(_bootstrap_coefficients(R, n1, n0) @ M - pooled**2)
        method = "mle"
    var = max(var, 0.0)
    hw = Z95 * math.sqrt(var)
    return MRMCResult(
        auc=pooled,
        variance=var,
        ci=(max(0.0, pooled - hw), min(1.0, pooled + hw)),
        reader_aucs=tuple(float(a) for a in reader_aucs),
        reader_variance=float((M[3] - M[7]) / R),
        moments=tuple(float(m) for m in M),
        method=method,
    )


def mrmc_bootstrap(scores, labels, n_boot: int = 2000, seed: int = 0):
    """Reader-and-case bootstrap of the pooled AUC; returns (variance, replicates)."""
    S = success_matrices(scores, labels)
    R, n1, n0 = S.shape
    rng = np.random.default_rng(seed)
    reps = np.empty(n_boot)
    for b in range(n_boot):
        wr = np.bincount(rng.integers(R, size=R), minlength=R)
        wi = np.bincount(rng.integers(n1, size=n1), minlength=n1)
        wj = np.bincount(rng.integers(n0, size=n0), minlength=n0)
        reps[b] = np.einsum("r,i,j,rij->", wr, wi, wj, S) / (R * n1 * n0)
    return float(reps.var(ddof=1)), reps


def image_moments(image):
    """(mean, variance, skewness, kurtosis, hyperskewness) of the pixel values.

    Central moments are population moments; kurtosis is the Pearson
    (non-excess) value mu4 / sigma^4.  A constant image returns zeros for
    everything but the mean.
    """
    x = np.asarray(image, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("image_moments needs a non-empty image")
    mean = float(x.mean())
    d = x - mean
    m2 = float(np.mean(d**2))
    if m2 == 0.0 or m2 <= (np.finfo(float).eps * max(abs(mean), 1.0)) ** 2:
        return (mean, 0.0, 0.0, 0.0, 0.0)
    sd = math.sqrt(m2)
    return (mean, m2, float(np.mean(d**3)) / sd**3, float(np.mean(d**4)) / m2**2,
            float(np.mean(d**5)) / sd**5)
