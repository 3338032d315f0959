"""Recurrent caustic removal.

After a warm-up fit against the raw frames, the loop alternates between
estimating each frame's caustic as the low-frequency part of its residual
and refitting the splats against the caustic-subtracted frames.  It stops
once the caustic estimate changes by less than the threshold between two
consecutive iterations.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .core import GaussianCloud, RecurrenceConfig, RecurrenceState
from .optim import LossConfig, OptimizerConfig, SplatTrainer
from .spectral import build_mask, lowpass_reconstruct

log = logging.getLogger(__name__)


@dataclass
class RecurrentResult:
    cloud: GaussianCloud
    renders: list[np.ndarray]
    caustics: list[np.ndarray]
    state: RecurrenceState
    losses: list[float]


def json_lines(stream):
    """Progress sink writing one JSON object per line to ``stream``."""
    def emit(record):
        stream.write(json.dumps(record, sort_keys=True) + "\n")
        stream.flush()
    return emit


def estimate_caustics(frames, renders, mask):
    return [lowpass_reconstruct(img - pred, mask) for (_, img), pred in zip(frames, renders)]


def caustic_change(new, old) -> float:
    """Mean absolute change per pixel and channel, averaged over frames."""
    return float(np.mean([np.mean(np.abs(a - b)) for a, b in zip(new, old)]))


def warm_up(frames, init_cloud: GaussianCloud, steps: int, opt: OptimizerConfig = OptimizerConfig(),
            loss: LossConfig = LossConfig()) -> tuple[SplatTrainer, list[float]]:
    """Fit the cloud to the uncorrected frames (zero caustics)."""
    trainer = SplatTrainer(init_cloud, frames, opt, loss)
    return trainer, trainer.run(steps)


def recur(trainer: SplatTrainer, rc: RecurrenceConfig, progress=None) -> RecurrentResult:
    """Run the caustic/fit alternation on an already warmed-up trainer (mutated)."""
    frames = trainer.frames
    h, w = frames[0][1].shape[:2]
    mask = build_mask(w, h, rc.k)
    state = RecurrenceState([np.zeros_like(img) for _, img in frames])
    losses = []
    renders = trainer.render_all()
    while True:
        state.iteration += 1
        estimate = estimate_caustics(frames, renders, mask)
        delta = caustic_change(estimate, state.caustics)
        state.change_history.append(delta)
        state.caustics = estimate
        record = dict(iteration=state.iteration, delta=delta, mean_loss=None)
        if delta < rc.threshold:
            state.converged = True
        elif state.iteration < rc.max_iterations:
            trainer.set_caustics(state.caustics)
            fit_losses = trainer.run(rc.steps_per_iteration)
            losses.extend(fit_losses)
            record["mean_loss"] = float(np.mean(fit_losses))
            renders = trainer.render_all()
        log.info("iteration %d delta %.3g", state.iteration, delta)
        if progress is not None:
            progress(record)
        if state.converged or state.iteration >= rc.max_iterations:
            break
    if not state.converged:
        log.warning("caustic estimate did not converge in %d iterations", rc.max_iterations)
    return RecurrentResult(trainer.cloud(), renders, state.caustics, state, losses)


def train_recurrent(frames, init_cloud: GaussianCloud, rc: RecurrenceConfig = RecurrenceConfig(),
                    opt: OptimizerConfig = OptimizerConfig(), loss: LossConfig = LossConfig(),
                    progress=None) -> RecurrentResult:
    """Warm up, then alternate caustic estimation and refitting until stable.

    ``progress`` receives one dict per iteration (iteration, delta,
    mean_loss).  Divergence during fitting propagates as DivergenceError;
    running out of iterations only clears ``state.converged``.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    trainer, warm = warm_up(frames, init_cloud, rc.warmup_steps, opt, loss)
    result = recur(trainer, rc, progress)
    result.losses = warm + result.losses
    return result
