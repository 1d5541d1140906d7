"""Patch extraction, PCA whitening, and grating stimuli.

The pipeline trains on whitened patch vectors: random square patches are
cut from grayscale images, reduced to the top principal components, and
variance-normalized there.  Gratings are generated in pixel space at an
amplitude matched to the natural patches and pushed through the same
whitening transform before they reach the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError, ShapeError
from .io import load_matrix, read_pgm, save_matrix


@dataclass(frozen=True)
class PatchConfig:
    patch_side: int = 12
    n_patches: int = 20000
    train_fraction: float = 0.9
    pca_k: int = 100
    seed: int = 0

    def validate(self) -> "PatchConfig":
        if self.patch_side < 2:
            raise ConfigError("patch_side must be at least 2")
        if self.n_patches < 2:
            raise ConfigError("n_patches must be at least 2")
        if not (0.0 < self.train_fraction < 1.0):
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.pca_k < 1 or self.pca_k > self.patch_side**2:
            raise ConfigError("pca_k must lie in [1, patch_side^2]")
        return self


def load_grayscale_images(directory) -> list[np.ndarray]:
    """All .pgm and .cgmat images in a directory, sorted by filename.
    PGM pixel values are scaled to [0, 1]; .cgmat matrices are taken
    as-is."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"image directory {d} does not exist")
    images = []
    for path in sorted(d.iterdir()):
        if path.suffix == ".pgm":
            images.append(read_pgm(path))
        elif path.suffix == ".cgmat":
            arr, _ = load_matrix(path)
            images.append(arr)
    if not images:
        raise FileNotFoundError(f"no .pgm or .cgmat images in {d}")
    return images


def extract_patches(images, cfg: PatchConfig,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Cut n_patches random square patches and split them into train and
    test rows (flattened row-major).

    Each patch picks an image uniformly among those large enough, then a
    uniform top-left corner.  Images smaller than the patch are skipped.
    """
    cfg.validate()
    side = cfg.patch_side
    usable = [np.asarray(img, dtype=np.float64) for img in images
              if img.shape[0] >= side and img.shape[1] >= side]
    if not usable:
        raise DomainError(f"no image is at least {side}x{side}")
    out = np.empty((cfg.n_patches, side * side))
    idx = rng.integers(0, len(usable), size=cfg.n_patches)
    for i in range(cfg.n_patches):
        img = usable[idx[i]]
        r = rng.integers(0, img.shape[0] - side + 1)
        c = rng.integers(0, img.shape[1] - side + 1)
        out[i] = img[r:r + side, c:c + side].ravel()
    n_train = int(round(cfg.train_fraction * cfg.n_patches))
    n_train = min(max(n_train, 1), cfg.n_patches - 1)
    return out[:n_train], out[n_train:]


@dataclass(frozen=True)
class Whitener:
    """Top-k PCA whitening transform fitted on training patches."""

    mean: np.ndarray     # (D,)
    eigvals: np.ndarray  # (k,) descending, floored
    basis: np.ndarray    # (D, k) orthonormal columns

    def __post_init__(self):
        if self.basis.shape != (self.mean.shape[0], self.eigvals.shape[0]):
            raise ShapeError("whitener fields have inconsistent shapes")

    @property
    def k(self) -> int:
        return self.eigvals.shape[0]


def fit_whitener(train_rows, k: int) -> Whitener:
    """Fit mean and top-k eigenvectors of the sample covariance
    (normalized by n-1).  Eigenvalues are floored at 1e-8 times the
    largest before any inversion; if fewer than k components survive the
    floor the data does not support the requested dimension."""
    x = np.atleast_2d(np.asarray(train_rows, dtype=np.float64))
    n, d = x.shape
    if n < 2:
        raise DomainError("need at least two rows to fit a whitener")
    if not (1 <= k <= d):
        raise DomainError(f"k={k} must lie in [1, {d}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    floor = 1e-8 * max(vals[0], 0.0)
    rank = int(np.sum(vals > floor))
    if rank < k:
        raise DomainError(f"requested k={k} components but the data supports "
                          f"only rank {rank}")
    return Whitener(mean=mean, eigvals=np.maximum(vals[:k], floor).copy(),
                    basis=np.ascontiguousarray(vecs[:, :k]))


def whiten(w: Whitener, rows) -> np.ndarray:
    """Project rows onto the retained components and normalize variance."""
    x = np.asarray(rows, dtype=np.float64)
    return (x - w.mean) @ (w.basis / np.sqrt(w.eigvals))


def dewhiten(w: Whitener, rows) -> np.ndarray:
    """Back to pixel space; composition with whiten is the rank-k
    projection around the mean."""
    v = np.asarray(rows, dtype=np.float64)
    return v @ (w.basis * np.sqrt(w.eigvals)).T + w.mean


# --- gratings ---------------------------------------------------------------

@dataclass(frozen=True)
class GratingSpec:
    orientation_deg: float
    frequency: float     # cycles per patch side
    phase: float         # radians
    amplitude: float


def default_orientations() -> np.ndarray:
    """Eight orientations, 0 to 157.5 degrees in 22.5 degree steps."""
    return np.arange(8) * 22.5


def default_frequencies(patch_side: int, count: int = 6) -> np.ndarray:
    """Log-spaced spatial frequencies from one cycle per patch up to a
    quarter of the patch side."""
    if patch_side < 4:
        raise ConfigError("patch_side too small for the default frequencies")
    return np.geomspace(1.0, patch_side / 4.0, count)


def default_phases() -> np.ndarray:
    return np.array([0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi])


def generate_gratings(patch_side: int, orientations_deg=None, frequencies=None,
                      phases=None, amplitude: float = 1.0,
                      ) -> tuple[np.ndarray, list[GratingSpec]]:
    """Full-field cosine gratings as flattened patches.

    patch(r, c) = amplitude * cos(2 pi f (c cos t + r sin t) / side + phase)
    with t the orientation in radians.  Rows are ordered orientation-major,
    then frequency, then phase.
    """
    if orientations_deg is None:
        orientations_deg = default_orientations()
    if frequencies is None:
        frequencies = default_frequencies(patch_side)
    if phases is None:
        phases = default_phases()
    rr, cc = np.meshgrid(np.arange(patch_side), np.arange(patch_side),
                         indexing="ij")
    patches = []
    specs = []
    for theta in orientations_deg:
        t = math.radians(theta)
        proj = cc * math.cos(t) + rr * math.sin(t)
        for f in frequencies:
            for phi in phases:
                g = amplitude * np.cos(2.0 * np.pi * f * proj / patch_side + phi)
                patches.append(g.ravel())
                specs.append(GratingSpec(orientation_deg=float(theta),
                                         frequency=float(f), phase=float(phi),
                                         amplitude=float(amplitude)))
    return np.array(patches), specs


def mean_centered_norm(patches) -> float:
    """Mean Euclidean norm of the rows after subtracting the mean row."""
    x = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    xc = x - x.mean(axis=0)
    return float(np.mean(np.linalg.norm(xc, axis=1)))


def target_amplitude(natural_patches, unit_gratings) -> float:
    """Amplitude that matches the mean grating norm to the mean norm of
    the mean-subtracted natural patches.  unit_gratings must be generated
    with amplitude 1; the grating norm is linear in the amplitude."""
    g = np.atleast_2d(np.asarray(unit_gratings, dtype=np.float64))
    g_norm = float(np.mean(np.linalg.norm(g, axis=1)))
    if g_norm <= 0.0:
        raise DomainError("unit gratings have zero mean norm")
    return mean_centered_norm(natural_patches) / g_norm


def save_whitener(path, w: Whitener, extra_meta: dict | None = None) -> None:
    """Persist a whitener as one flat row: mean, eigvals, basis."""
    flat = np.concatenate([w.mean, w.eigvals, w.basis.ravel()])
    d = w.mean.shape[0]
    meta = {str(k): str(v) for k, v in (extra_meta or {}).items()}
    meta.update(format="whitener", d=str(d), k=str(w.k))
    save_matrix(path, flat[None, :], meta=meta)


def load_whitener(path) -> tuple[Whitener, dict]:
    flat, meta = load_matrix(path)
    if meta.get("format") != "whitener":
        raise FormatError(f"{path}: not a whitener container")
    try:
        d, k = int(meta["d"]), int(meta["k"])
    except (KeyError, ValueError):
        raise FormatError(f"{path}: missing whitener dimensions") from None
    if flat.shape != (1, d + k + d * k):
        raise FormatError(f"{path}: whitener payload does not match d={d} "
                          f"k={k}")
    row = flat[0]
    w = Whitener(mean=row[:d], eigvals=row[d:d + k],
                 basis=row[d + k:].reshape(d, k))
    return w, meta


def group_by_orientation(gratings: np.ndarray, specs: list[GratingSpec],
                         ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Distinct orientations (sorted) and the grating rows of each."""
    orientations = sorted({s.orientation_deg for s in specs})
    groups = []
    for theta in orientations:
        rows = [i for i, s in enumerate(specs) if s.orientation_deg == theta]
        groups.append(gratings[rows])
    return np.array(orientations), groups
