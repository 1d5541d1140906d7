"""Free-running Gibbs sessions and clamped responses.

A session runs a population of independent chains from a data-informed
start and records, every few sweeps, the hidden-1 conditional probability
vector of each chain.  Those probability vectors are the "frames" all the
downstream correlation analysis works on; matched Bernoulli noise frames
serve as the control.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .model import ModelParams, Offsets, check_dims, cond_hidden1
from .training import PersistentChains, TrainConfig, gibbs_model_step, mean_field_data

FRAME_KINDS = ("spontaneous", "orientation_map", "random_control", "som_node")


@dataclass(frozen=True)
class SessionConfig:
    n_chains: int = 100
    n_iterations: int = 2000
    record_every: int = 10
    seed: int = 0

    def validate(self) -> "SessionConfig":
        if self.n_chains < 1 or self.n_iterations < 1 or self.record_every < 1:
            raise ConfigError("session sizes must be positive")
        if self.n_iterations % self.record_every != 0:
            raise ConfigError(
                f"record_every={self.record_every} must divide "
                f"n_iterations={self.n_iterations}")
        return self


@dataclass
class FrameSet:
    """A stack of hidden-1 activity vectors plus origin metadata."""

    frames: np.ndarray            # (F, M)
    kind: str
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        if self.kind not in FRAME_KINDS:
            raise ConfigError(f"unknown frame kind {self.kind!r}; "
                              f"expected one of {FRAME_KINDS}")


def average_initial_probability(p: ModelParams, c: Offsets, dataset,
                                cfg: TrainConfig) -> np.ndarray:
    """Mean over all data rows of the mean-field hidden-1 probabilities.
    Used to start free-running chains in a data-like regime."""
    L, M, N = check_dims(p, c)
    data = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    if data.shape[1] != L:
        raise ShapeError(f"dataset width {data.shape[1]} does not match L={L}")
    total = np.zeros(M)
    count = 0
    for start in range(0, data.shape[0], max(cfg.batch_size, 1)):
        batch = data[start:start + cfg.batch_size]
        mf = mean_field_data(batch, p, c, cfg)
        total += mf.y.sum(axis=0)
        count += batch.shape[0]
    return total / count


def run_spontaneous_session(p: ModelParams, c: Offsets, p_init,
                            cfg: SessionConfig) -> FrameSet:
    """Free-running session without any clamped input.

    Chains start from Bernoulli draws of p_init.  After every
    `record_every` sweeps the conditional probability vector
    P(y | x, z) of each chain is recorded (the same distribution the
    sweep's y sample was drawn from).  Frames are stacked recording by
    recording, chains in index order within each recording.
    """
    cfg.validate()
    L, M, N = check_dims(p, c)
    p_init = np.asarray(p_init, dtype=np.float64)
    if p_init.shape != (M,):
        raise ShapeError(f"p_init has shape {p_init.shape}, expected ({M},)")
    if p_init.min() < 0.0 or p_init.max() > 1.0:
        raise ValueError("p_init entries must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    y0 = (rng.random((cfg.n_chains, M)) < p_init).astype(np.float64)
    chains = PersistentChains(
        x=np.broadcast_to(c.c_x, (cfg.n_chains, L)).copy(),
        y=y0,
        z=np.broadcast_to(c.c_z, (cfg.n_chains, N)).copy(),
    )
    n_records = cfg.n_iterations // cfg.record_every
    frames = np.empty((n_records * cfg.n_chains, M))
    rec = 0
    for sweep in range(1, cfg.n_iterations + 1):
        chains = gibbs_model_step(chains, p, c, rng)
        if sweep % cfg.record_every == 0:
            # Same x and z the sweep's y was drawn from.
            frames[rec * cfg.n_chains:(rec + 1) * cfg.n_chains] = cond_hidden1(
                chains.x, chains.z, p, c)
            rec += 1
    meta = {
        "kind": "spontaneous",
        "seed": str(cfg.seed),
        "n_chains": str(cfg.n_chains),
        "n_iterations": str(cfg.n_iterations),
        "record_every": str(cfg.record_every),
        "layout": "recording-major",
    }
    return FrameSet(frames=frames, kind="spontaneous", meta=meta)


def random_control_frames(p_init, count: int,
                          rng: np.random.Generator) -> FrameSet:
    """Bernoulli noise frames matched to the session's initial rates."""
    p_init = np.asarray(p_init, dtype=np.float64)
    if p_init.ndim != 1:
        raise ShapeError("p_init must be a vector")
    if count < 1:
        raise ConfigError("count must be positive")
    frames = (rng.random((count, p_init.shape[0])) < p_init).astype(np.float64)
    return FrameSet(frames=frames, kind="random_control",
                    meta={"kind": "random_control", "count": str(count)})


def clamped_response(p: ModelParams, c: Offsets, stimulus,
                     cfg: TrainConfig) -> np.ndarray:
    """Mean-field hidden-1 probabilities for one clamped stimulus vector."""
    stimulus = np.asarray(stimulus, dtype=np.float64)
    if stimulus.ndim != 1:
        raise ShapeError("stimulus must be a single vector")
    mf = mean_field_data(stimulus[None, :], p, c, cfg)
    return mf.y[0]
