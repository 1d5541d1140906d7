"""Orientation maps, correlation statistics, SOM, and filter summaries.

Everything here consumes first-hidden-layer probability vectors: clamped
responses to grating groups become orientation maps, free-running frames
are correlated against those maps with a t-test significance threshold,
and a small circular self-organizing map clusters the frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, DomainError, ShapeError
from .model import ModelParams, Offsets
from .stimuli import Whitener, whiten
from .training import TrainConfig, mean_field_data


# --- orientation maps -------------------------------------------------------

@dataclass(frozen=True)
class OrientationMapSet:
    """One mean clamped-response row per grating orientation."""

    orientations: np.ndarray  # (K,) degrees, ascending
    maps: np.ndarray          # (K, M), entries in [0, 1]

    def __post_init__(self):
        orientations = np.asarray(self.orientations, dtype=np.float64)
        maps = np.asarray(self.maps, dtype=np.float64)
        if maps.ndim != 2 or orientations.shape != (maps.shape[0],):
            raise ShapeError("need one map row per orientation")
        if np.any(np.diff(orientations) <= 0):
            raise DomainError("orientations must be strictly ascending")
        if np.any(maps < 0.0) or np.any(maps > 1.0):
            raise DomainError("map entries must lie in [0, 1]")
        object.__setattr__(self, "orientations", orientations)
        object.__setattr__(self, "maps", maps)

    @property
    def width(self) -> int:
        return self.maps.shape[1]


def orientation_maps(params: ModelParams, offsets: Offsets, grating_groups,
                     orientations, whitener: Whitener | None = None,
                     mf_cfg: TrainConfig | None = None) -> OrientationMapSet:
    """Average clamped first-layer response per orientation group.

    grating_groups holds one stimulus matrix per orientation.  With a
    whitener the groups are pixel-space patches and get whitened first;
    without one they must already be in model coordinates.
    """
    if len(grating_groups) != len(orientations):
        raise ShapeError("one grating group per orientation required")
    if mf_cfg is None:
        mf_cfg = TrainConfig()
    rows = []
    for group in grating_groups:
        g = np.atleast_2d(np.asarray(group, dtype=np.float64))
        if g.shape[0] == 0:
            raise DomainError("empty orientation group")
        x = whiten(whitener, g) if whitener is not None else g
        mf = mean_field_data(x, params, offsets, mf_cfg)
        rows.append(mf.y.mean(axis=0))
    return OrientationMapSet(orientations=np.asarray(orientations, float),
                             maps=np.array(rows))


# --- correlation statistics -------------------------------------------------

def pearson(a, b) -> float:
    """Pearson product-moment correlation of two equal-length vectors."""
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError("vectors must have equal length")
    if x.size < 3:
        raise DomainError("need at least 3 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        raise DomainError("correlation undefined for constant input")
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def significance_threshold(n: int, alpha: float) -> float:
    """Critical |r| for a two-tailed zero-correlation t-test with n
    samples: t has n-2 degrees of freedom and the threshold is
    t / sqrt(t^2 + n - 2)."""
    if n < 4:
        raise DomainError("need n >= 4 samples")
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    t = float(stats.t.ppf(1.0 - alpha / 2.0, n - 2))
    return t / np.sqrt(t * t + n - 2)


def _row_correlations(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson r between every row of a and every row of b; rows with
    zero variance yield r = 0 against everything."""
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    an = np.linalg.norm(ac, axis=1)
    bn = np.linalg.norm(bc, axis=1)
    # centering a constant row leaves rounding residue, not exact zeros
    an[np.ptp(a, axis=1) == 0.0] = 0.0
    bn[np.ptp(b, axis=1) == 0.0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (ac @ bc.T) / np.outer(an, bn)
    r[~np.isfinite(r)] = 0.0
    return np.clip(r, -1.0, 1.0)


@dataclass(frozen=True)
class CorrelationReport:
    r: np.ndarray                      # (F, K)
    threshold: float
    significant: np.ndarray            # (F,) bool
    significant_fraction: float
    preference: np.ndarray             # (F,) argmax row of r, -1 if not significant
    preference_hist: np.ndarray        # (K,) relative occurrences
    max_r_per_orientation: np.ndarray  # (K,) NaN where no significant frame

    def __post_init__(self):
        if np.any(self.r < -1.0) or np.any(self.r > 1.0):
            raise DomainError("correlations must lie in [-1, 1]")
        if not (0.0 <= self.significant_fraction <= 1.0):
            raise DomainError("significant_fraction must lie in [0, 1]")


def correlate(frames, map_set: OrientationMapSet,
              threshold: float) -> CorrelationReport:
    """Correlate every frame against every orientation map.

    A frame is significant when its largest |r| over orientations reaches
    the threshold; its preference is the orientation with the largest
    signed r.  The preference histogram is scaled so the first bin (the
    horizontal orientation) equals 1; if that bin is empty the largest
    bin is used as the unit instead, and with no significant frames at
    all the histogram is all zeros.  Constant frames correlate with
    nothing (r = 0) and are never significant.
    """
    f = np.atleast_2d(np.asarray(getattr(frames, "frames", frames),
                                 dtype=np.float64))
    if f.shape[1] != map_set.width:
        raise ShapeError(f"frame width {f.shape[1]} does not match map "
                         f"width {map_set.width}")
    r = _row_correlations(f, map_set.maps)
    significant = np.max(np.abs(r), axis=1) >= threshold
    significant &= np.ptp(f, axis=1) > 0.0  # constant frames never qualify
    preference = np.where(significant, np.argmax(r, axis=1), -1)
    k = map_set.maps.shape[0]
    counts = np.bincount(preference[significant], minlength=k).astype(float)
    if counts[0] > 0:
        hist = counts / counts[0]
    elif counts.max() > 0:
        hist = counts / counts.max()
    else:
        hist = counts
    max_r = np.full(k, np.nan)
    if np.any(significant):
        max_r = np.max(r[significant], axis=0)
    return CorrelationReport(
        r=r, threshold=float(threshold), significant=significant,
        significant_fraction=float(np.mean(significant)),
        preference=preference, preference_hist=hist,
        max_r_per_orientation=max_r)


# --- self-organizing map ----------------------------------------------------

@dataclass(frozen=True)
class SomConfig:
    n_nodes: int = 40
    n_epochs: int = 20
    lr_start: float = 0.5
    lr_end: float = 0.01
    radius_start: float = 10.0
    radius_end: float = 1.0
    seed: int = 0

    def validate(self) -> "SomConfig":
        if self.n_nodes < 2:
            raise ConfigError("need at least 2 nodes")
        if self.n_epochs < 1:
            raise ConfigError("need at least 1 epoch")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise ConfigError("learning rates must be positive")
        if self.radius_start <= 0 or self.radius_end <= 0:
            raise ConfigError("radii must be positive")
        return self


@dataclass(frozen=True)
class SomModel:
    """Nodes on a circular 1-D lattice, in lattice order."""

    nodes: np.ndarray                       # (n_nodes, M)
    qe_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def circular_distance(i, j, n: int):
    """Shortest lattice distance on a ring of n positions."""
    d = np.abs(np.asarray(i) - np.asarray(j))
    return np.minimum(d, n - d)


def _bmu(nodes: np.ndarray, v: np.ndarray) -> int:
    d2 = np.sum((nodes - v) ** 2, axis=1)
    return int(np.argmin(d2))  # argmin takes the lowest index on ties


def quantization_error(nodes: np.ndarray, frames: np.ndarray) -> float:
    """Mean Euclidean distance from each frame to its best-matching node."""
    d2 = (np.sum(frames**2, axis=1)[:, None] - 2.0 * frames @ nodes.T
          + np.sum(nodes**2, axis=1)[None, :])
    return float(np.mean(np.sqrt(np.maximum(d2.min(axis=1), 0.0))))


def train_som(frames, cfg: SomConfig = SomConfig(),
              rng: np.random.Generator | None = None) -> SomModel:
    """Classic online Kohonen training on a circular lattice.

    Nodes start as a random distinct sample of the frames.  Each epoch
    shuffles the frames and, per frame, pulls every node toward it with
    a Gaussian neighborhood over circular lattice distance around the
    best-matching unit.  Learning rate and radius decay linearly per
    epoch.  Quantization error is measured after each epoch.
    """
    cfg.validate()
    f = np.atleast_2d(np.asarray(getattr(frames, "frames", frames),
                                 dtype=np.float64))
    if f.shape[0] < cfg.n_nodes:
        raise DomainError(f"need at least {cfg.n_nodes} frames, "
                          f"got {f.shape[0]}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    nodes = f[rng.choice(f.shape[0], size=cfg.n_nodes, replace=False)].copy()
    lattice = np.arange(cfg.n_nodes)
    qe = np.empty(cfg.n_epochs)
    for epoch in range(cfg.n_epochs):
        if cfg.n_epochs == 1:
            frac = 0.0
        else:
            frac = epoch / (cfg.n_epochs - 1)
        lr = (1.0 - frac) * cfg.lr_start + frac * cfg.lr_end
        radius = (1.0 - frac) * cfg.radius_start + frac * cfg.radius_end
        order = rng.permutation(f.shape[0])
        for i in order:
            v = f[i]
            b = _bmu(nodes, v)
            d = circular_distance(lattice, b, cfg.n_nodes)
            h = np.exp(-(d * d) / (2.0 * radius * radius))
            nodes += (lr * h)[:, None] * (v - nodes)
        qe[epoch] = quantization_error(nodes, f)
    return SomModel(nodes=nodes, qe_history=qe)


def correlate_som(som: SomModel, map_set: OrientationMapSet,
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per node: index of the best-correlated orientation map, the r
    value there, and the full node-by-map r matrix.  Constant nodes get
    r = 0 everywhere."""
    if som.nodes.shape[1] != map_set.width:
        raise ShapeError("node width does not match map width")
    r = _row_correlations(som.nodes, map_set.maps)
    best = np.argmax(r, axis=1)
    return best, r[np.arange(som.n_nodes), best], r


# --- filter summaries -------------------------------------------------------

def top_active_filters(values, k: int = 25) -> np.ndarray:
    """Indices of the k largest entries, descending; ties broken by
    ascending index."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if not (1 <= k <= v.size):
        raise DomainError(f"k={k} must lie in [1, {v.size}]")
    order = np.lexsort((np.arange(v.size), -v))  # primary -v, then index
    return order[:k]


def second_layer_rf(params: ModelParams, whitener: Whitener, unit_k: int,
                    top: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Composite pixel-space receptive field of one second-layer unit.

    Takes the `top` first-layer filters with the largest absolute
    coupling to the unit (descending, ties by ascending index) and back-
    projects their coupling-weighted sum through the whitener basis.
    Filters are directions, so the projection omits the mean shift: a
    negated coupling column exactly negates the image.
    """
    if not (0 <= unit_k < params.U.shape[1]):
        raise DomainError(f"unit index {unit_k} out of range")
    col = params.U[:, unit_k]
    idx = top_active_filters(np.abs(col), k=min(top, col.size))
    composite = params.W[:, idx] @ col[idx]
    image = dewhiten_direction(whitener, composite)
    return image, idx


def dewhiten_direction(w: Whitener, rows) -> np.ndarray:
    """Back-project direction vectors (filters, not data points) to pixel
    space: the linear part of dewhitening, with no mean shift."""
    v = np.asarray(rows, dtype=np.float64)
    return v @ (w.basis * np.sqrt(w.eigvals)).T


def first_layer_filters(params: ModelParams, whitener: Whitener) -> np.ndarray:
    """All first-layer filters as pixel-space rows, one per hidden unit."""
    return dewhiten_direction(whitener, params.W.T)


def orientation_selectivity(map_set: OrientationMapSet) -> np.ndarray:
    """Per-unit orientation selectivity index.

    Each unit's tuning curve is its column of the orientation maps; the
    index is (best - orthogonal) / (best + orthogonal), where orthogonal
    is the response 90 degrees from the best orientation.  Requires an
    even number of orientations evenly covering 180 degrees.  Flat
    tuning gives 0; a unit responding only at one orientation gives 1.
    """
    k = map_set.maps.shape[0]
    if k % 2 != 0:
        raise DomainError("need an even number of orientations")
    best = np.argmax(map_set.maps, axis=0)
    orth = (best + k // 2) % k
    cols = np.arange(map_set.width)
    r_max = map_set.maps[best, cols]
    r_orth = map_set.maps[orth, cols]
    denom = r_max + r_orth
    out = np.zeros(map_set.width)
    nz = denom > 0
    out[nz] = (r_max[nz] - r_orth[nz]) / denom[nz]
    return out
