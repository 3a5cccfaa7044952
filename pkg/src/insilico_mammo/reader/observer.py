"""Scanning channelized reader.

Each reader convolves a prepared 224x224 image with a fixed, orthonormal
bank of zero-mean channels (Laguerre-Gauss plus oriented difference of
Gaussians), takes the linear combination of channel responses at every
scan position and scores the maximum.  Only the channel weights and the
bias are learned.  Readers differ by the training seed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, signal
from scipy.special import eval_laguerre, expit

from ..errors import DegenerateLabelsError, DesignError, FormatError
from .stats import auc, mrmc_ci

IMAGE_SHAPE = (224, 224)
KERNEL_HALF = 20
SCAN_STRIDE = 2
SUBGROUP_KEYS = ("breast_density", "mass_size", "mass_density", "dose")


# -- channels -----------------------------------------------------------------

def _grid(half):
    ax = np.arange(-half, half + 1, dtype=float)
    return np.meshgrid(ax, ax, indexing="ij")


def laguerre_gauss(n: int, a: float, half: int = KERNEL_HALF) -> np.ndarray:
    x, y = _grid(half)
    g = 2.0 * np.pi * (x**2 + y**2) / a**2
    return np.exp(-g / 2.0) * eval_laguerre(n, g)


def oriented_dog(theta: float, sigma_minor: float, sigma_major: float, surround: float = 1.6,
                 half: int = KERNEL_HALF) -> np.ndarray:
    x, y = _grid(half)
    u = x * math.cos(theta) + y * math.sin(theta)
    v = -x * math.sin(theta) + y * math.cos(theta)

    def g(su, sv):
        return np.exp(-0.5 * (u**2 / su**2 + v**2 / sv**2)) / (2 * np.pi * su * sv)
    return g(sigma_major, sigma_minor) - g(sigma_major * surround, sigma_minor * surround)


def channel_bank(lg_orders: int = 5, lg_width: float = 14.0, orientations: int = 4,
                 dog_sigmas: tuple[float, float] = (1.5, 5.0), half: int = KERNEL_HALF) -> np.ndarray:
    """(K, 2h+1, 2h+1) zero-mean, orthonormal channel templates."""
    raw = [laguerre_gauss(n, lg_width, half) for n in range(lg_orders)]
    raw += [oriented_dog(np.pi * k / orientations, *dog_sigmas, half=half) for k in range(orientations)]
    A = np.stack([r.ravel() - r.mean() for r in raw], axis=1)
    Q, Rm = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(Rm))  # keep each channel's original polarity
    return Q.T.reshape(len(raw), 2 * half + 1, 2 * half + 1)


# -- images -------------------------------------------------------------------

def prepare_image(pixels, erode_px: int = 12, background_sigma: float = 12.0) -> np.ndarray:
    """Raw detector image -> local contrast image, zero outside the breast.

    The breast mask comes from the smoothed attenuation -log(I / I0), with
    I0 the open-field level (99th percentile).  Inside the eroded mask the
    output is (B - I) / B, B a normalised Gaussian background of I.  For
    small contrasts this matches the log image to first order, and unlike a
    pixelwise log it stays bounded when a low-dose pixel records no photons.
    """
    img = np.asarray(pixels, dtype=float)
    if img.shape != IMAGE_SHAPE:
        raise DesignError(f"reader images must be {IMAGE_SHAPE}, got {img.shape}")
    i0 = np.percentile(img, 99)
    if not i0 > 0:
        return np.zeros(IMAGE_SHAPE)
    smooth = -np.log(np.clip(ndimage.gaussian_filter(img, 3.0), i0 * 1e-3, None) / i0)
    breast = smooth > 0.5 * np.percentile(smooth, 90)
    mask = ndimage.binary_erosion(breast, iterations=erode_px, border_value=1)
    mask[:2, :] = mask[-2:, :] = False
    mask[:, :2] = mask[:, -2:] = False
    if not mask.any():
        return np.zeros(IMAGE_SHAPE)
    m = mask.astype(float)
    num = ndimage.gaussian_filter(img * m, background_sigma)
    den = ndimage.gaussian_filter(m, background_sigma)
    bg = np.maximum(num / np.maximum(den, 1e-9), i0 * 1e-3)
    return np.where(mask, (bg - img) / bg, 0.0)


def channel_responses(image: np.ndarray, bank: np.ndarray, stride: int = SCAN_STRIDE) -> np.ndarray:
    """(K, P) channel correlations at every scan position (stride grid)."""
    img = np.asarray(image, dtype=float)
    out = []
    for h in bank:
        c = signal.fftconvolve(img, h[::-1, ::-1], mode="same")
        out.append(c[::stride, ::stride].ravel())
    return np.stack(out)


# -- cases --------------------------------------------------------------------

@dataclass
class CaseSet:
    images: Optional[list]  # prepared 224x224 images
    labels: np.ndarray
    metadata: list = field(default_factory=list)  # per-case dicts with subgroup keys
    split: str = "train"
    case_ids: Optional[list] = None
    features: Optional[np.ndarray] = None  # (N, K, P), cached or supplied directly

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        n = len(self.labels)
        if self.images is not None:
            if len(self.images) != n:
                raise DesignError("images and labels differ in length")
            for im in self.images:
                if np.shape(im) != IMAGE_SHAPE or not np.all(np.isfinite(im)):
                    raise DesignError(f"case images must be finite {IMAGE_SHAPE} arrays")
        if self.features is not None and len(self.features) != n:
            raise DesignError("features and labels differ in length")
        if self.case_ids is None:
            self.case_ids = list(range(n))
        if not self.metadata:
            self.metadata = [{} for _ in range(n)]

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_features(cls, features, labels, split="train") -> "CaseSet":
        f = np.asarray(features, dtype=float)
        if f.ndim == 2:
            f = f[:, :, None]
        return cls(images=None, labels=labels, split=split, features=f)

    def feature_tensor(self, bank) -> np.ndarray:
        if self.features is None:
            self.features = np.stack([channel_responses(im, bank) for im in self.images]).astype(np.float32)
        return self.features


# -- reader -------------------------------------------------------------------

@dataclass
class Reader:
    bank: Optional[np.ndarray]  # None means the case features are used as given
    weights: np.ndarray  # effective per-channel weights w'
    bias: float
    seed: int
    history: list = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def logit_from_features(self, F: np.ndarray) -> np.ndarray:
        F = np.asarray(F)
        if F.ndim == 2:
            F = F[None]
        return np.einsum("k,nkp->np", self.weights, F).max(axis=1) + self.bias

    def top_template(self) -> np.ndarray:
        if self.bank is None:
            raise DesignError("feature-only reader has no templates")
        return self.bank[int(np.argmax(self.weights))]


def score(reader: Reader, image) -> float:
    """Logistic score of one prepared image; monotone in the scan-max logit."""
    img = np.asarray(image, dtype=float)
    if reader.bank is None:
        raise DesignError("feature-only readers score feature tensors, not images")
    if img.shape != IMAGE_SHAPE:
        raise DesignError(f"reader expects {IMAGE_SHAPE} images, got {img.shape}")
    z = reader.logit_from_features(channel_responses(img, reader.bank))[0]
    return float(expit(z))


def score_cases(reader: Reader, cases: CaseSet) -> np.ndarray:
    F = cases.feature_tensor(reader.bank) if reader.bank is not None else cases.features
    return expit(reader.logit_from_features(F))


def _auc_or_half(s, y):
    try:
        return auc(s, y)
    except DegenerateLabelsError:
        return 0.5


def train_reader(train: CaseSet, val: CaseSet, seed: int, bank: Optional[np.ndarray] = None,
                 batch_size: int = 64, lr: float = 1e-4, lr_scale: float = 100.0,
                 max_epochs: int = 150, patience: int = 25, decay: float = 0.9) -> Reader:
    """Binary cross-entropy on the scan-max logit, RMSProp, early stop on val AUC."""
    y = np.asarray(train.labels)
    if len(y) == 0 or y.min() == y.max():
        raise DegenerateLabelsError("training set needs both labels")
    if bank is None and train.features is None:
        bank = channel_bank()
    F = train.feature_tensor(bank) if bank is not None else train.features
    Fv = val.feature_tensor(bank) if bank is not None else val.features
    K = F.shape[1]
    # per-channel scale so the step size means the same thing for every channel
    scale = np.sqrt(np.mean(np.asarray(F, dtype=float) ** 2, axis=(0, 2))) + 1e-12
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x7EAD])
    Fs = F / scale[None, :, None]
    Fvs = Fv / scale[None, :, None]
    # start near the per-channel matched direction of the scan-max responses;
    # the max-pooled loss is not convex and purely random starts often settle
    # on background structure.  The seed perturbs the start and the shuffling.
    mx = Fs.max(axis=2)
    sep = (mx[y == 1].mean(axis=0) - mx[y == 0].mean(axis=0)) / (mx.std(axis=0) + 1e-12)
    w0 = sep / (np.linalg.norm(sep) + 1e-12)
    w = w0 + rng.normal(scale=0.1, size=K)
    b = 0.0
    eta = lr * lr_scale
    gw2, gb2 = np.zeros(K), 0.0

    def forward(Fx, w, b):
        proj = np.einsum("k,nkp->np", w, Fx)
        arg = proj.argmax(axis=1)
        return proj[np.arange(len(Fx)), arg] + b, arg

    # ties in val AUC (common once it saturates) are broken by val cross-entropy
    best_key, best, since = (-1.0, 0.0), (w.copy(), b), 0
    yv = np.asarray(val.labels)
    history = []
    n = len(y)
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        for s0 in range(0, n, batch_size):
            idx = order[s0:s0 + batch_size]
            z, arg = forward(Fs[idx], w, b)
            r = expit(z) - y[idx]  # dL/dz for cross-entropy
            gw = (r[:, None] * Fs[idx, :, arg]).mean(axis=0)
            gb = r.mean()
            gw2 = decay * gw2 + (1 - decay) * gw**2
            gb2 = decay * gb2 + (1 - decay) * gb**2
            w = w - eta * gw / (np.sqrt(gw2) + 1e-8)
            b = b - eta * gb / (math.sqrt(gb2) + 1e-8)
        zv, _ = forward(Fvs, w, b)
        v = _auc_or_half(zv, yv)
        history.append(v)
        nll = float(np.mean(np.logaddexp(0.0, zv) - yv * zv)) if len(yv) else 0.0
        if (v, -nll) > best_key:
            best_key, best, since = (v, -nll), (w.copy(), b), 0
        else:
            since += 1
            if since >= patience:
                break
    w, b = best
    if not np.all(np.isfinite(w)) or not math.isfinite(b):
        raise DesignError("reader training diverged")
    return Reader(bank=bank, weights=w / scale, bias=float(b), seed=int(seed), history=history)


# -- studies ----------------------------------------------------------------

@dataclass
class ReaderStudy:
    scores: np.ndarray  # (readers, cases)
    labels: np.ndarray
    reader_ids: list
    case_ids: list
    metadata: list = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.scores.shape != (len(self.reader_ids), len(self.case_ids)):
            raise DesignError("score matrix must be readers x cases")

    @property
    def reader_aucs(self):
        return [auc(s, self.labels) for s in self.scores]

    def analyse(self):
        return mrmc_ci(self.scores, self.labels)


def run_study(train: CaseSet, val: CaseSet, test: CaseSet, seeds: Sequence[int],
              bank: Optional[np.ndarray] = None, **train_kw) -> ReaderStudy:
    bank = channel_bank() if bank is None and train.features is None else bank
    readers = [train_reader(train, val, s, bank=bank, **train_kw) for s in seeds]
    scores = np.stack([score_cases(r, test) for r in readers])
    return ReaderStudy(scores, test.labels, list(seeds), list(test.case_ids), list(test.metadata))


# -- CSV --------------------------------------------------------------------

SCORE_COLUMNS = ("reader_id", "case_id", "label") + SUBGROUP_KEYS + ("score",)


def write_scores_csv(study: ReaderStudy, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for r, rid in enumerate(study.reader_ids):
            for c, cid in enumerate(study.case_ids):
                meta = study.metadata[c] if study.metadata else {}
                w.writerow([rid, cid, int(study.labels[c])] + [meta.get(k, "") for k in SUBGROUP_KEYS]
                           + [repr(float(study.scores[r, c]))])


def read_scores_csv(path) -> ReaderStudy:
    """Load a score matrix, e.g. from an external reader; must be fully crossed."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or any(k not in rows[0] for k in ("reader_id", "case_id", "label", "score")):
        raise FormatError(f"{path}: missing score columns")
    readers = list(dict.fromkeys(r["reader_id"] for r in rows))
    cases = list(dict.fromkeys(r["case_id"] for r in rows))
    ri = {r: i for i, r in enumerate(readers)}
    ci = {c: i for i, c in enumerate(cases)}
    scores = np.full((len(readers), len(cases)), np.nan)
    labels = np.full(len(cases), -1)
    meta = [None] * len(cases)
    for row in rows:
        i, j = ri[row["reader_id"]], ci[row["case_id"]]
        if not np.isnan(scores[i, j]):
            raise DesignError(f"duplicate score for reader {row['reader_id']} case {row['case_id']}")
        scores[i, j] = float(row["score"])
        lab = int(row["label"])
        if labels[j] not in (-1, lab):
            raise DesignError(f"case {row['case_id']} has inconsistent labels")
        labels[j] = lab
        meta[j] = {k: row.get(k, "") for k in SUBGROUP_KEYS}
    if np.isnan(scores).any():
        raise DesignError("score matrix is not fully crossed")
    return ReaderStudy(scores, labels, readers, cases, meta)


def save_reader(reader: Reader, path) -> None:
    np.savez(Path(path), weights=reader.weights, bias=reader.bias, seed=reader.seed,
             bank=reader.bank if reader.bank is not None else np.zeros(0))


def load_reader(path) -> Reader:
    d = np.load(Path(path))
    bank = d["bank"] if d["bank"].size else None
    return Reader(bank=bank, weights=d["weights"], bias=float(d["bias"]), seed=int(d["seed"]))
