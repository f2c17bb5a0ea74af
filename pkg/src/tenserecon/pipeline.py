"""End-to-end composition: sensor frames -> strains -> lengths -> tracked states.

This is the software image of the live system: a resistance stream comes in,
per-sensor regime flags are chosen from the previously reconstructed shape,
strains go through the bending polynomial or the sequence model, and the
geometric solver tracks node positions frame to frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TenseReconError
from .harness import MetricsReport, evaluate
from .lstm import LstmModel
from .reconstruction import SolveOptions, SolveResult, Tracker
from .sensors import (
    BendCalibration,
    Mode,
    N_SENSORS,
    SensorFrame,
    StrainVector,
    lengths_from_strain,
    strains_from_frame,
)
from .topology import Topology, edge_lengths


@dataclass
class SessionLog:
    """A recorded session: sensor frames, optional paired truth, metadata."""

    sensor_frames: list[SensorFrame]
    truth_frames: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = [f.timestamp_ms for f in self.sensor_frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise TenseReconError("sensor frame timestamps must increase strictly")
        if self.truth_frames:
            tts = [f.timestamp_ms for f in self.truth_frames]
            if tts != ts:
                raise TenseReconError("truth frames not aligned with sensor frames")


def reconstruct_session(frames, t: Topology, cal: BendCalibration,
                        model: LstmModel | None,
                        opts: SolveOptions = SolveOptions(), *,
                        clamp: bool = False,
                        baseline: SensorFrame | None = None) -> list[SolveResult]:
    """Track node positions through a sensor-frame stream.

    The baseline (rest) frame defaults to the first frame of the session.
    The first frame treats every sensor as stretching (the structure is
    pre-tensioned at rest); later frames pick each sensor's regime from the
    previously reconstructed tendon length against its rest length.  Model
    input windows are left-padded with the earliest sample until enough
    history accumulates, so every frame yields a result.
    """
    frames = list(frames)
    if not frames:
        return []
    if baseline is None:
        baseline = frames[0]
    if model is None:
        raise TenseReconError("reconstruct_session needs a stretching model")

    rest = t.rest_lengths()
    window = model.window
    tracker = Tracker(t, opts)
    results: list[SolveResult] = []
    history: list[np.ndarray] = []
    prev_lengths: np.ndarray | None = None

    for frame in frames:
        dr = (frame.resistances - baseline.resistances) / baseline.resistances
        history.append(dr)
        if len(history) > window:
            history.pop(0)
        hist = np.stack(history)
        if hist.shape[0] < window:  # left-pad with the earliest sample
            pad = np.repeat(hist[:1], window - hist.shape[0], axis=0)
            hist = np.concatenate([pad, hist])

        if prev_lengths is None:
            modes = [Mode.STRETCHING] * N_SENSORS
        else:
            modes = [Mode.BENDING if prev_lengths[k] < rest[k] else Mode.STRETCHING
                     for k in range(N_SENSORS)]

        strains = strains_from_frame(frame, baseline, modes, cal, model, hist,
                                     clamp=clamp)
        lengths = lengths_from_strain(strains, t)
        result = tracker.process(frame.timestamp_ms, lengths)
        results.append(result)
        prev_lengths = edge_lengths(t, result.state)
    return results


def strains_only(frames, cal: BendCalibration, model: LstmModel | None,
                 *, clamp: bool = False,
                 baseline: SensorFrame | None = None) -> list[StrainVector]:
    """Sensor stream -> per-frame strain vectors without solving geometry.

    Modes are chosen from the sign of the instantaneous dR/R here (no
    reconstructed shape is available); mainly a debugging aid.
    """
    frames = list(frames)
    if not frames:
        return []
    if baseline is None:
        baseline = frames[0]
    window = model.window if model is not None else 1
    out = []
    history: list[np.ndarray] = []
    for frame in frames:
        dr = (frame.resistances - baseline.resistances) / baseline.resistances
        history.append(dr)
        if len(history) > window:
            history.pop(0)
        hist = np.stack(history)
        if hist.shape[0] < window:
            pad = np.repeat(hist[:1], window - hist.shape[0], axis=0)
            hist = np.concatenate([pad, hist])
        modes = [Mode.BENDING if d < 0 else Mode.STRETCHING for d in dr]
        out.append(strains_from_frame(frame, baseline, modes, cal, model, hist,
                                      clamp=clamp))
    return out


def evaluate_session(results, truth_frames, t: Topology) -> MetricsReport:
    """Metrics over tracked results against ground-truth states."""
    est_states = [r.state for r in results]
    flags = [r.converged for r in results]
    return evaluate(est_states, truth_frames, t, converged_flags=flags)
