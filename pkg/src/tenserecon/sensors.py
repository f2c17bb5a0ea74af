"""Sensor models: raw readings to resistance, resistance to strain, strain to length.

Each tendon doubles as a conductive-rubber strain sensor with two regimes:
a bending (compressive) regime described by a degree-5 polynomial in the
normalized resistance change, and a stretching (tensile) regime handled by
the learned sequence model in :mod:`tenserecon.lstm`.  This module owns the
pure per-sensor math and the dispatch between the two regimes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    CalibrationError,
    SaturatedReadingError,
    SensorDomainError,
    WindowUnderflowError,
)

N_SENSORS = 24

# Degree-5 calibration of the bending regime, strain as a function of dR/R,
# highest power first.  Valid on dR/R in [-1, 0].
DEFAULT_BEND_COEFFS = (-4.7589, -16.521, -20.239, -9.9675, -0.5464, -0.0016)


class Mode(Enum):
    """Per-sensor regime flag."""

    BENDING = "bending"
    STRETCHING = "stretching"


@dataclass(frozen=True)
class SensorFrame:
    """One timestamped reading of all 24 sensor resistances, in ohms."""

    timestamp_ms: int
    resistances: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.resistances, dtype=float)
        if r.shape != (N_SENSORS,):
            raise SensorDomainError(f"expected {N_SENSORS} resistances, got shape {r.shape}")
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            bad = int(np.argmin(np.where(np.isfinite(r), r, -np.inf)))
            raise SensorDomainError("resistance must be finite and > 0", sensor=bad)
        r.flags.writeable = False
        object.__setattr__(self, "resistances", r)


@dataclass(frozen=True)
class StrainVector:
    """Dimensionless strains for all 24 tendons; every entry must be > -1."""

    strains: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.strains, dtype=float)
        if e.shape != (N_SENSORS,):
            raise SensorDomainError(f"expected {N_SENSORS} strains, got shape {e.shape}")
        if np.any(~np.isfinite(e)) or np.any(e <= -1.0):
            bad = int(np.argmin(np.where(np.isfinite(e), e, -np.inf)))
            raise SensorDomainError(f"strain must be finite and > -1, got {e[bad]}", sensor=bad)
        e.flags.writeable = False
        object.__setattr__(self, "strains", e)


@dataclass(frozen=True)
class DividerConfig:
    """Voltage-divider readout: sensor on the high side of a known resistor."""

    v_supply: float = 5.0
    r_known: float = 5.8e6
    adc_full_scale: int = 1023
    sensor_high_side: bool = True

    def __post_init__(self):
        if self.v_supply <= 0 or self.r_known <= 0 or self.adc_full_scale <= 0:
            raise SensorDomainError("divider parameters must be positive")


@dataclass(frozen=True)
class BendCalibration:
    """Degree-5 polynomial strain(dR/R), coefficients highest power first."""

    coefficients: tuple[float, ...] = DEFAULT_BEND_COEFFS
    domain: tuple[float, float] = (-1.0, 0.0)

    def __post_init__(self):
        if len(self.coefficients) != 6:
            raise CalibrationError(f"expected 6 coefficients, got {len(self.coefficients)}")
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise CalibrationError(f"empty or invalid domain {self.domain}")


def resistance_from_adc(adc: float, cfg: DividerConfig = DividerConfig()) -> float:
    """Invert the divider: ADC counts -> sensor resistance in ohms.

    Raises SaturatedReadingError at 0 or full scale, which would indicate an
    open or short circuit rather than a measurable resistance.
    """
    if adc <= 0 or adc >= cfg.adc_full_scale:
        raise SaturatedReadingError(
            f"ADC reading {adc} saturated (full scale {cfg.adc_full_scale})")
    v = cfg.v_supply * adc / cfg.adc_full_scale
    if cfg.sensor_high_side:
        return cfg.r_known * (cfg.v_supply - v) / v
    return cfg.r_known * v / (cfg.v_supply - v)


def delta_r_ratio(r0: float, r1: float) -> float:
    """Normalized resistance change (r1 - r0) / r0 relative to baseline r0."""
    if r0 <= 0:
        raise SensorDomainError(f"baseline resistance must be > 0, got {r0}")
    return (r1 - r0) / r0


def bending_strain(x: float, cal: BendCalibration = BendCalibration(), *,
                   clamp: bool = False) -> float:
    """Evaluate the bending polynomial at dR/R = x (Horner form).

    Outside the calibration domain this raises SensorDomainError unless
    clamp=True, in which case x is clipped to the nearest domain edge.
    Silent extrapolation of a degree-5 fit is never acceptable.
    """
    lo, hi = cal.domain
    if not np.isfinite(x):
        raise SensorDomainError(f"non-finite dR/R {x}")
    if x < lo or x > hi:
        if not clamp:
            raise SensorDomainError(f"dR/R = {x} outside calibration domain [{lo}, {hi}]")
        x = min(max(x, lo), hi)
    acc = 0.0
    for c in cal.coefficients:
        acc = acc * x + c
    return acc


def fit_bending_polynomial(samples) -> tuple[BendCalibration, float]:
    """Least-squares degree-5 fit of (dR/R, strain) pairs.

    Returns the calibration (domain = sampled x range) and the coefficient
    of determination R^2 = 1 - SS_res / SS_tot.
    """
    pts = [(float(x), float(y)) for x, y in samples]
    if len(pts) < 7:
        raise CalibrationError(f"need at least 7 samples, got {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if len(np.unique(x)) < 6:
        raise CalibrationError(
            f"need at least 6 distinct dR/R values, got {len(np.unique(x))}")
    vander = np.vander(x, 6)
    coeffs, _, rank, _ = np.linalg.lstsq(vander, y, rcond=None)
    if rank < 6:
        raise CalibrationError("rank-deficient design matrix")
    resid = y - vander @ coeffs
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 and ss_res == 0.0 else 1.0 - ss_res / ss_tot
    cal = BendCalibration(coefficients=tuple(float(c) for c in coeffs),
                          domain=(float(x.min()), float(x.max())))
    return cal, r2


def _bend_peak(cal: BendCalibration) -> tuple[float, float]:
    """Argmax and max of the bend polynomial over its domain (golden section)."""
    lo, hi = cal.domain
    grid = np.linspace(lo, hi, 2001)
    vals = np.array([bending_strain(g, cal) for g in grid])
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - phi * (b - a), a + phi * (b - a)
    for _ in range(80):
        if bending_strain(c, cal) > bending_strain(d, cal):
            b, d = d, c
            c = b - phi * (b - a)
        else:
            a, c = c, d
            d = a + phi * (b - a)
    xp = 0.5 * (a + b)
    return xp, bending_strain(xp, cal)


def bend_inverse(strain: float, cal: BendCalibration = BendCalibration(), *,
                 tol: float = 1e-12) -> float:
    """Invert the bending polynomial: strain -> dR/R by bisection.

    The polynomial is unimodal on its domain: increasing up to an interior
    peak, then decreasing toward the domain's upper edge.  Small strains
    near the rest point are inverted on the near-zero (decreasing) branch;
    anything below that branch's reach falls back to the wide (increasing)
    branch, which covers the full compressive range.
    """
    if not np.isfinite(strain):
        raise SensorDomainError(f"non-finite strain {strain}")
    lo, hi = cal.domain
    x_peak, y_peak = _bend_peak(cal)
    y_lo = bending_strain(lo, cal)
    y_hi = bending_strain(hi, cal)

    def bisect(a, b, decreasing):
        for _ in range(200):
            m = 0.5 * (a + b)
            v = bending_strain(m, cal)
            if b - a < tol:
                return m
            if (v > strain) == decreasing:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    if y_hi <= strain <= y_peak:
        return bisect(x_peak, hi, decreasing=True)
    if y_lo <= strain <= y_peak:
        return bisect(lo, x_peak, decreasing=False)
    raise SensorDomainError(
        f"strain {strain} outside invertible range [{y_lo:.4f}, {y_peak:.4f}]")


def select_mode(estimated_length: float, rest_length: float) -> Mode:
    """Compressive (shorter than rest) -> bending; ties -> stretching."""
    if rest_length <= 0:
        raise SensorDomainError(f"rest length must be > 0, got {rest_length}")
    return Mode.BENDING if estimated_length < rest_length else Mode.STRETCHING


def lengths_from_strain(strains: StrainVector, topology) -> np.ndarray:
    """Tendon lengths L_k = (1 + strain_k) * rest_k, in tendon-index order."""
    rest = topology.rest_lengths()
    if rest.shape != strains.strains.shape:
        raise SensorDomainError(
            f"strain/rest-length mismatch: {strains.strains.shape} vs {rest.shape}")
    return (1.0 + strains.strains) * rest


@dataclass(frozen=True)
class StretchTable:
    """Monotone lookup between tensile strain and dR/R.

    Default shape is a saturating exponential dR/R = a * (1 - exp(-e / b)).
    Measured curves can replace it via JSON ({"strain": [...], "dr_ratio":
    [...]}) as long as both columns increase strictly.
    """

    strain: np.ndarray
    dr_ratio: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.strain, dtype=float)
        d = np.asarray(self.dr_ratio, dtype=float)
        if s.shape != d.shape or s.ndim != 1 or len(s) < 2:
            raise CalibrationError("stretch table needs two equal 1-D columns")
        if np.any(np.diff(s) <= 0) or np.any(np.diff(d) <= 0):
            raise CalibrationError("stretch table columns must increase strictly")
        s.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "strain", s)
        object.__setattr__(self, "dr_ratio", d)

    def dr_from_strain(self, e: float) -> float:
        if e < self.strain[0] or e > self.strain[-1]:
            raise SensorDomainError(
                f"strain {e} outside stretch table range "
                f"[{self.strain[0]}, {self.strain[-1]}]")
        return float(np.interp(e, self.strain, self.dr_ratio))

    def strain_from_dr(self, x: float) -> float:
        if x < self.dr_ratio[0] or x > self.dr_ratio[-1]:
            raise SensorDomainError(
                f"dR/R {x} outside stretch table range "
                f"[{self.dr_ratio[0]}, {self.dr_ratio[-1]}]")
        return float(np.interp(x, self.dr_ratio, self.strain))


def default_stretch_curve(strain):
    """Saturating tensile response dR/R = 2 (1 - exp(-strain / 0.5))."""
    return 2.0 * (1.0 - np.exp(-np.asarray(strain, dtype=float) / 0.5))


def default_stretch_table(max_strain: float = 1.0, n: int = 2001) -> StretchTable:
    e = np.linspace(0.0, max_strain, n)
    return StretchTable(strain=e, dr_ratio=default_stretch_curve(e))


def save_calibration(cal: BendCalibration, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"coefficients": list(cal.coefficients),
                   "domain": list(cal.domain)}, fh, indent=1)
        fh.write("\n")


def load_calibration(path) -> BendCalibration:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"unparseable calibration file {path}: {exc}") from exc
    try:
        return BendCalibration(coefficients=tuple(float(c) for c in d["coefficients"]),
                               domain=tuple(float(v) for v in d["domain"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError(f"malformed calibration file {path}: {exc}") from exc


def save_stretch_table(table: StretchTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"strain": [float(v) for v in table.strain],
                   "dr_ratio": [float(v) for v in table.dr_ratio]}, fh)
        fh.write("\n")


def load_stretch_table(path) -> StretchTable:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"unparseable stretch table {path}: {exc}") from exc
    try:
        return StretchTable(strain=np.array(d["strain"], dtype=float),
                            dr_ratio=np.array(d["dr_ratio"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError(f"malformed stretch table {path}: {exc}") from exc


def strains_from_frame(frame: SensorFrame, baseline: SensorFrame,
                       modes, cal: BendCalibration, model,
                       history: np.ndarray, *, clamp: bool = False) -> StrainVector:
    """Convert one sensor frame into per-tendon strains.

    Per sensor: form dR/R against the baseline frame, then route to the
    bending polynomial or to the sequence model depending on its mode flag.
    ``history`` is a (window, 24) array of past dR/R samples whose last row
    corresponds to ``frame``; stretching sensors consume their column as the
    model input window.  Errors are tagged with the sensor index.

    clamp=True clips out-of-domain bending inputs to the domain edge and
    bounds all strains away from -1; use it for noisy live data.
    """
    from .lstm import predict_strain  # deferred to avoid a cycle at import

    modes = list(modes)
    if len(modes) != N_SENSORS:
        raise SensorDomainError(f"expected {N_SENSORS} mode flags, got {len(modes)}")
    history = np.asarray(history, dtype=float)
    if history.ndim != 2 or history.shape[1] != N_SENSORS:
        raise SensorDomainError(f"history must be (window, {N_SENSORS}), got {history.shape}")

    out = np.empty(N_SENSORS)
    for k in range(N_SENSORS):
        try:
            dr = delta_r_ratio(baseline.resistances[k], frame.resistances[k])
            if modes[k] is Mode.BENDING:
                out[k] = bending_strain(dr, cal, clamp=clamp)
            else:
                if model is None:
                    raise WindowUnderflowError("no stretching model supplied", sensor=k)
                if history.shape[0] < model.window:
                    raise WindowUnderflowError(
                        f"history {history.shape[0]} < window {model.window}", sensor=k)
                out[k] = predict_strain(model, history[-model.window:, k])
        except (SensorDomainError, WindowUnderflowError) as exc:
            if exc.sensor is None:  # tag errors raised by per-sensor helpers
                raise type(exc)(str(exc), sensor=k) from exc
            raise
        except Exception as exc:
            raise SensorDomainError(str(exc), sensor=k) from exc
    if clamp:
        np.clip(out, -0.95, 2.0, out=out)
    return StrainVector(strains=out)
