"""Synthetic deformation scenarios and sensor streams.

Replaces the physical rig: ground-truth shapes come from kinematic
constraint projection (struts stay rigid, anchors stay put, tendons follow),
and sensor resistances come from inverting the strain models per tendon and
adding banded dR/R noise.  Everything is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, RelaxationError, SensorDomainError, TopologyError
from .reconstruction import StateFrame
from .sensors import BendCalibration, SensorFrame, StretchTable, bend_inverse
from .topology import Topology

DEFAULT_NOISE_BAND = (-0.23, 0.13)  # observed dR/R noise envelope
DEFAULT_BASELINE_OHMS = 5.8e6


@dataclass(frozen=True)
class NoiseModel:
    """Additive dR/R noise: uniform over band, or clipped gaussian."""

    kind: str = "uniform"
    band: tuple[float, float] = DEFAULT_NOISE_BAND
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.band
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise CalibrationError(f"noise band must satisfy lo < hi, got {self.band}")
        if self.kind not in ("uniform", "gaussian", "none"):
            raise CalibrationError(f"unknown noise kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo, hi = self.band
        if self.kind == "none":
            return np.zeros(size)
        if self.kind == "uniform":
            return rng.uniform(lo, hi, size=size)
        mid = 0.5 * (lo + hi)
        draw = rng.normal(mid, (hi - lo) / 4.0, size=size)
        return np.clip(draw, lo, hi)


@dataclass(frozen=True)
class Scenario:
    """Keyframed displacement timeline sampled at a fixed rate.

    Each keyframe maps node id -> displacement vector (m) at time t_ms;
    nodes not named in a keyframe have zero target there.  Displacements
    interpolate linearly between keyframes.  Sampling covers t in
    [0, last keyframe) at sample_rate_hz.
    """

    keyframes: tuple[tuple[int, dict[int, tuple[float, float, float]]], ...]
    sample_rate_hz: float = 10.0
    seed: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        times = [t for t, _ in self.keyframes]
        if not times or any(b <= a for a, b in zip(times, times[1:])):
            raise TopologyError("keyframes must be nonempty and strictly time-ordered")
        if self.sample_rate_hz <= 0:
            raise TopologyError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        for _, disp in self.keyframes:
            for vec in disp.values():
                if not np.all(np.isfinite(vec)):
                    raise TopologyError("keyframe displacements must be finite")

    def displacements_at(self, t_ms: float) -> dict[int, np.ndarray]:
        nodes = sorted({n for _, d in self.keyframes for n in d})
        times = np.array([t for t, _ in self.keyframes], dtype=float)
        out = {}
        for n in nodes:
            track = np.array([d.get(n, (0.0, 0.0, 0.0)) for _, d in self.keyframes],
                             dtype=float)
            vec = np.array([np.interp(t_ms, times, track[:, ax]) for ax in range(3)])
            out[n] = vec
        return out


def deform(t: Topology, displacements: dict[int, np.ndarray],
           tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Displace nodes, then project back onto the rigid-strut manifold.

    Raw displacements are applied to the named nodes; a least-norm Newton
    iteration then restores every strut to its rigid length within tol while
    anchors stay fixed and the correction stays minimal.  Tendons are free
    to change length.  Returns 12x3 coordinates.
    """
    for n in displacements:
        if n in t.anchored:
            raise TopologyError(f"cannot displace anchored node {n}")
        if n not in range(len(t.nominal_coords)):
            raise TopologyError(f"unknown node id {n}")

    coords = t.nominal_coords.copy()
    for n, vec in displacements.items():
        coords[n] = coords[n] + np.asarray(vec, dtype=float)

    free = [n for n in range(len(coords)) if n not in t.anchored]
    col = {n: 3 * k for k, n in enumerate(free)}
    for _ in range(max_iter):
        gaps = np.array([
            np.linalg.norm(coords[i] - coords[j]) - t.strut_length
            for i, j in t.struts
        ])
        if np.max(np.abs(gaps)) < tol:
            return coords
        jac = np.zeros((len(t.struts), 3 * len(free)))
        for row, (i, j) in enumerate(t.struts):
            e = coords[i] - coords[j]
            d = np.linalg.norm(e)
            if d < 1e-9:
                raise RelaxationError(f"strut {i}-{j} collapsed during projection")
            u = e / d
            if i in col:
                jac[row, col[i]:col[i] + 3] = u
            if j in col:
                jac[row, col[j]:col[j] + 3] = -u
        # least-norm correction: move as little as possible to close the gaps
        step = jac.T @ np.linalg.solve(jac @ jac.T, gaps)
        flat = coords[free].reshape(-1) - step
        coords[free] = flat.reshape(-1, 3)
    raise RelaxationError(
        f"strut projection did not reach {tol} m in {max_iter} iterations")


def resistances_from_state(state, t: Topology, cal: BendCalibration,
                           stretch_inverse: StretchTable,
                           baseline: np.ndarray, noise: NoiseModel,
                           rng: np.random.Generator | None = None,
                           timestamp_ms: int = 0) -> SensorFrame:
    """Exact geometry -> noisy resistances, one tendon at a time.

    strain = L/L0 - 1; compressive strains invert the bending polynomial,
    tensile ones look up the stretch table.  Noise is added in dR/R space
    and resistances reconstructed as R0 * (1 + dR/R).  Passing no rng draws
    from a fresh generator seeded by the noise model, so a standalone call
    is reproducible; session generators pass their own stream.
    """
    from .topology import edge_lengths

    baseline = np.asarray(baseline, dtype=float)
    if baseline.shape != (len(t.tendons),):
        raise SensorDomainError(f"baseline must have shape ({len(t.tendons)},)")
    if rng is None:
        rng = np.random.default_rng(noise.seed)

    lengths = edge_lengths(t, state)
    rest = t.rest_lengths()
    if np.any(lengths <= 0):
        raise SensorDomainError("tendon length must be positive")
    strains = lengths / rest - 1.0

    dr = np.empty(len(strains))
    for k, eps in enumerate(strains):
        try:
            # dead band keeps rounding-level strains on the stretch side,
            # matching the ties-go-to-stretching convention
            if eps < -1e-12:
                dr[k] = bend_inverse(eps, cal)
            else:
                dr[k] = stretch_inverse.dr_from_strain(max(eps, 0.0))
        except SensorDomainError as exc:
            raise SensorDomainError(str(exc), sensor=k) from exc
    dr = dr + noise.sample(rng, len(dr))
    resist = baseline * (1.0 + dr)
    # noise can push dR/R through -1; floor keeps the frame physical
    resist = np.maximum(resist, 1.0)
    return SensorFrame(timestamp_ms=timestamp_ms, resistances=resist)


def generate_session(scenario: Scenario, t: Topology, cal: BendCalibration,
                     stretch_inverse: StretchTable,
                     baseline: np.ndarray | None = None
                     ) -> tuple[list[StateFrame], list[SensorFrame]]:
    """Sample the scenario timeline into paired truth and sensor streams.

    Returns (ground-truth StateFrames, SensorFrames), timestamp-aligned,
    sampled at scenario.sample_rate_hz over [0, last keyframe).  Output is
    bit-reproducible for a fixed (scenario, seed).
    """
    if baseline is None:
        baseline = np.full(len(t.tendons), DEFAULT_BASELINE_OHMS)
    rng = np.random.default_rng(scenario.noise.seed)
    duration_ms = scenario.keyframes[-1][0]
    n_frames = int(round(duration_ms / 1000.0 * scenario.sample_rate_hz))
    truth: list[StateFrame] = []
    sensed: list[SensorFrame] = []
    for k in range(n_frames):
        t_ms = int(round(k * 1000.0 / scenario.sample_rate_hz))
        try:
            coords = deform(t, scenario.displacements_at(t_ms))
            frame = resistances_from_state(coords, t, cal, stretch_inverse,
                                           baseline, scenario.noise, rng=rng,
                                           timestamp_ms=t_ms)
        except (RelaxationError, SensorDomainError) as exc:
            raise type(exc)(f"t={t_ms} ms: {exc}") from exc
        truth.append(StateFrame(timestamp_ms=t_ms, coords=coords, anchored=t.anchored))
        sensed.append(frame)
    return truth, sensed


def scenario_to_json_dict(sc: Scenario) -> dict:
    return {
        "sample_rate_hz": sc.sample_rate_hz,
        "seed": sc.seed,
        "noise": {"kind": sc.noise.kind, "band": list(sc.noise.band),
                  "seed": sc.noise.seed},
        "keyframes": [
            {"t_ms": t_ms,
             "displacements": {str(n): [float(v) for v in vec]
                               for n, vec in disp.items()}}
            for t_ms, disp in sc.keyframes
        ],
    }


def scenario_from_json_dict(d: dict) -> Scenario:
    try:
        noise = NoiseModel(kind=d["noise"].get("kind", "uniform"),
                           band=tuple(d["noise"].get("band", DEFAULT_NOISE_BAND)),
                           seed=int(d["noise"].get("seed", 0)))
        keyframes = tuple(
            (int(kf["t_ms"]),
             {int(n): tuple(float(v) for v in vec)
              for n, vec in kf["displacements"].items()})
            for kf in d["keyframes"]
        )
        return Scenario(keyframes=keyframes,
                        sample_rate_hz=float(d["sample_rate_hz"]),
                        seed=int(d.get("seed", 0)), noise=noise)
    except (KeyError, TypeError, ValueError) as exc:
        raise TopologyError(f"malformed scenario JSON: {exc}") from exc


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_json_dict(sc), fh, indent=1)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TopologyError(f"unparseable scenario file {path}: {exc}") from exc
    return scenario_from_json_dict(d)


def press_scenario(t: Topology, depth: float = 0.030, seed: int = 0,
                   noise: NoiseModel | None = None,
                   sample_rate_hz: float = 10.0) -> Scenario:
    """Press the three top-face nodes down, hold, release: the demo scenario.

    The pressed nodes are the tendon triangle with the highest centroid,
    pushed ``depth`` meters straight down over 0-5 s, held to 15 s, released
    by 20 s, then at rest until 30 s.
    """
    from .topology import tendon_triangles

    tris = tendon_triangles(t)
    top = max(tris, key=lambda tri: t.nominal_coords[list(tri), 2].mean())
    down = {n: (0.0, 0.0, -depth) for n in top}
    zero = {n: (0.0, 0.0, 0.0) for n in top}
    return Scenario(
        keyframes=(
            (0, zero), (5000, down), (15000, down), (20000, zero), (30000, zero),
        ),
        sample_rate_hz=sample_rate_hz,
        seed=seed,
        noise=noise if noise is not None else NoiseModel(seed=seed),
    )
