"""From-scratch LSTM regressor for the stretching regime.

Maps a window of normalized-resistance-change samples to a single tensile
strain.  Gates follow the standard formulation with one deliberate quirk:
the candidate cell state has no bias term.  Input features are the dR/R
sample plus its in-window first difference, a proxy for the stretch rate,
because the tensile response depends on how fast the tendon is pulled.

Training is plain mini-batch gradient descent with gradient-norm clipping,
deterministic for a fixed seed.  The model and its normalization statistics
serialize to a small versioned JSON file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, ModelFormatError
from .sensors import default_stretch_curve

MODEL_FORMAT_VERSION = 1

_PARAM_NAMES = ("w_f", "b_f", "w_i", "b_i", "w_h", "w_o", "b_o", "w_out", "b_out")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class Normalization:
    """Per-feature z-score statistics, plus target scaling for the readout.

    input_low/input_high record the training input hull; prediction clips
    raw features into it so the network never extrapolates.
    """

    input_mean: np.ndarray
    input_scale: np.ndarray
    target_mean: float = 0.0
    target_scale: float = 1.0
    input_low: np.ndarray | None = None
    input_high: np.ndarray | None = None


@dataclass(frozen=True)
class LstmModel:
    """Gate weights, scalar readout head, window length, normalization."""

    input_size: int
    hidden_size: int
    window: int
    w_f: np.ndarray
    b_f: np.ndarray
    w_i: np.ndarray
    b_i: np.ndarray
    w_h: np.ndarray  # candidate cell weights; no bias by design
    w_o: np.ndarray
    b_o: np.ndarray
    w_out: np.ndarray
    b_out: float
    norm: Normalization

    def params(self) -> dict[str, np.ndarray | float]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def validate_shapes(self) -> None:
        d, h = self.input_size, self.hidden_size
        if h < 1 or self.window < 1:
            raise ModelFormatError(f"hidden_size {h} and window {self.window} must be >= 1")
        expect = {
            "w_f": (h, d + h), "w_i": (h, d + h), "w_h": (h, d + h), "w_o": (h, d + h),
            "b_f": (h,), "b_i": (h,), "b_o": (h,), "w_out": (h,),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if np.asarray(arr).shape != shape:
                raise ModelFormatError(
                    f"{name} has shape {np.asarray(arr).shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ModelFormatError(f"{name} contains non-finite values")
        if len(self.norm.input_mean) != d or len(self.norm.input_scale) != d:
            raise ModelFormatError("normalization stats do not match input_size")


def init_model(input_size: int = 2, hidden_size: int = 32, window: int = 20,
               seed: int = 0, norm: Normalization | None = None) -> LstmModel:
    """Uniform +-1/sqrt(D+H) weight init, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    d, h = input_size, hidden_size
    s = 1.0 / np.sqrt(d + h)

    def w():
        return rng.uniform(-s, s, size=(h, d + h))

    if norm is None:
        norm = Normalization(input_mean=np.zeros(d), input_scale=np.ones(d))
    m = LstmModel(
        input_size=d, hidden_size=h, window=window,
        w_f=w(), b_f=np.zeros(h),
        w_i=w(), b_i=np.zeros(h),
        w_h=w(),
        w_o=w(), b_o=np.zeros(h),
        w_out=rng.uniform(-s, s, size=h), b_out=0.0,
        norm=norm,
    )
    m.validate_shapes()
    return m


def lstm_step(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              m: LstmModel) -> tuple[np.ndarray, np.ndarray]:
    """One recurrence step; returns (h_t, c_t).

    f = sig(W_f [x, h] + b_f)    how much old cell state survives
    i = sig(W_i [x, h] + b_i)    how much new candidate enters
    g = tanh(W_h [x, h])         candidate cell state (bias-free)
    c = f * c_prev + i * g
    o = sig(W_o [x, h] + b_o)
    h = o * tanh(c)
    """
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    if x_t.shape != (m.input_size,) or h_prev.shape != (m.hidden_size,) \
            or c_prev.shape != (m.hidden_size,):
        raise ModelFormatError(
            f"step shapes {x_t.shape}/{h_prev.shape}/{c_prev.shape} do not match "
            f"model D={m.input_size} H={m.hidden_size}")
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(h_prev))
            and np.all(np.isfinite(c_prev))):
        raise DivergenceError("non-finite input to lstm_step")
    z = np.concatenate([x_t, h_prev])
    f = _sigmoid(m.w_f @ z + m.b_f)
    i = _sigmoid(m.w_i @ z + m.b_i)
    g = np.tanh(m.w_h @ z)
    c_t = f * c_prev + i * g
    o = _sigmoid(m.w_o @ z + m.b_o)
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def _forward_batch(m: LstmModel, x: np.ndarray):
    """Batched forward over normalized windows x (B, T, D) -> (preds_norm, cache)."""
    b, t, d = x.shape
    h = np.zeros((b, m.hidden_size))
    c = np.zeros((b, m.hidden_size))
    cache = []
    for step in range(t):
        z = np.concatenate([x[:, step, :], h], axis=1)
        f = _sigmoid(z @ m.w_f.T + m.b_f)
        i = _sigmoid(z @ m.w_i.T + m.b_i)
        g = np.tanh(z @ m.w_h.T)
        c_new = f * c + i * g
        o = _sigmoid(z @ m.w_o.T + m.b_o)
        cache.append((z, f, i, g, c, c_new, o))
        c = c_new
        h = o * np.tanh(c_new)
    y = h @ m.w_out + m.b_out
    return y, (cache, h)


def _normalize_windows(m: LstmModel, windows: np.ndarray) -> np.ndarray:
    return (windows - m.norm.input_mean) / m.norm.input_scale


def _clip_to_hull(m: LstmModel, windows: np.ndarray) -> np.ndarray:
    if m.norm.input_low is None or m.norm.input_high is None:
        return windows
    return np.clip(windows, m.norm.input_low, m.norm.input_high)


def features_from_window(dr_window: np.ndarray) -> np.ndarray:
    """Raw feature matrix (T, 2) from T dR/R samples: value and first difference.

    The difference is computed inside the window (first entry 0), so a window
    is self-contained and needs no sample older than its own first entry.
    """
    dr = np.asarray(dr_window, dtype=float)
    if dr.ndim != 1:
        raise ModelFormatError(f"dr window must be 1-D, got shape {dr.shape}")
    diff = np.empty_like(dr)
    diff[0] = 0.0
    diff[1:] = np.diff(dr)
    return np.stack([dr, diff], axis=1)


def forward_sequence(window: np.ndarray, m: LstmModel) -> float:
    """Run one raw feature window (T, D) through the cell and readout.

    The window is normalized with the model statistics, iterated from zero
    initial states, and the readout on the final hidden state is mapped back
    to physical strain.
    """
    w = np.asarray(window, dtype=float)
    if w.shape != (m.window, m.input_size):
        raise ModelFormatError(
            f"window shape {w.shape} does not match (T={m.window}, D={m.input_size})")
    y, _ = _forward_batch(m, _normalize_windows(m, _clip_to_hull(m, w))[None])
    return float(y[0] * m.norm.target_scale + m.norm.target_mean)


def predict_strain(m: LstmModel, dr_window: np.ndarray) -> float:
    """Strain prediction from a window of T raw dR/R samples."""
    return forward_sequence(features_from_window(dr_window), m)


def _backward_batch(m: LstmModel, x: np.ndarray, targets: np.ndarray):
    """Mean-squared-error gradients over a normalized batch.

    Returns (preds_norm, grads dict) where the loss is
    mean((pred - target)^2) in normalized target space.
    """
    b, t, d = x.shape
    y, (cache, h_final) = _forward_batch(m, x)
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite forward pass during backprop")
    dy = 2.0 * (y - targets) / b

    g_wf = np.zeros_like(m.w_f); g_bf = np.zeros_like(m.b_f)
    g_wi = np.zeros_like(m.w_i); g_bi = np.zeros_like(m.b_i)
    g_wh = np.zeros_like(m.w_h)
    g_wo = np.zeros_like(m.w_o); g_bo = np.zeros_like(m.b_o)
    g_wout = h_final.T @ dy
    g_bout = float(dy.sum())

    dh = np.outer(dy, m.w_out)
    dc = np.zeros((b, m.hidden_size))
    for step in range(t - 1, -1, -1):
        z, f, i, g, c_prev, c_new, o = cache[step]
        tc = np.tanh(c_new)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        df = dc * c_prev
        di = dc * g
        dg = dc * i
        af = df * f * (1.0 - f)
        ai = di * i * (1.0 - i)
        ah = dg * (1.0 - g * g)
        ao = do * o * (1.0 - o)
        g_wf += af.T @ z; g_bf += af.sum(axis=0)
        g_wi += ai.T @ z; g_bi += ai.sum(axis=0)
        g_wh += ah.T @ z
        g_wo += ao.T @ z; g_bo += ao.sum(axis=0)
        dz = af @ m.w_f + ai @ m.w_i + ah @ m.w_h + ao @ m.w_o
        dh = dz[:, d:]
        dc = dc * f
    grads = {"w_f": g_wf, "b_f": g_bf, "w_i": g_wi, "b_i": g_bi, "w_h": g_wh,
             "w_o": g_wo, "b_o": g_bo, "w_out": g_wout, "b_out": g_bout}
    return y, grads


def backward(window: np.ndarray, target: float, m: LstmModel) -> dict:
    """Full backprop-through-time gradients of the squared error on one window.

    The window is a raw feature matrix (T, D); loss and gradients live in
    normalized target space, matching what the trainer optimizes.
    """
    w = np.asarray(window, dtype=float)
    if w.shape != (m.window, m.input_size):
        raise ModelFormatError(
            f"window shape {w.shape} does not match (T={m.window}, D={m.input_size})")
    t_norm = (float(target) - m.norm.target_mean) / m.norm.target_scale
    _, grads = _backward_batch(m, _normalize_windows(m, w)[None], np.array([t_norm]))
    return grads


def sequence_loss(m: LstmModel, windows_norm: np.ndarray, targets_norm: np.ndarray) -> float:
    y, _ = _forward_batch(m, windows_norm)
    return float(np.mean((y - targets_norm) ** 2))


@dataclass(frozen=True)
class SequenceDataset:
    """Windows (N, T, D) of raw features with scalar strain targets (N,)."""

    windows: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=float)
        t = np.asarray(self.targets, dtype=float)
        if w.ndim != 3 or len(w) != len(t):
            raise ModelFormatError(f"bad dataset shapes {w.shape} / {t.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(t))):
            raise ModelFormatError("dataset contains non-finite values")


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch losses (index 0 = before any update) and validation error histogram."""

    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    error_bin_edges: np.ndarray = field(repr=False)
    error_bin_counts: np.ndarray = field(repr=False)


def make_stretch_dataset(seed: int = 0, rates: tuple[float, ...] = (0.05, 0.1, 0.2),
                         max_strain: float = 0.5, sample_rate_hz: float = 10.0,
                         cycles: int = 2, hold_s: float = 4.0,
                         rate_gain: float = 0.05,
                         noise_band: tuple[float, float] | None = None,
                         window: int = 20, val_fraction: float = 0.3) -> SequenceDataset:
    """Synthetic tensile sessions at several pull rates, windowed for training.

    Each rate produces trapezoidal strain cycles (ramp up, hold, ramp down,
    hold) whose dR/R trace follows the default saturating curve with a small
    rate-dependent gain; the holds put constant-input windows in
    distribution, matching rest and hold phases of live sessions.  Optional
    uniform noise (in dR/R, over noise_band) emulates real sensor noise.
    The last val_fraction of each trajectory is held out, so validation
    windows never overlap training windows.
    """
    rng = np.random.default_rng(seed)
    dt = 1.0 / sample_rate_hz
    windows, targets, split = [], [], []
    for rate in rates:
        ramp = max_strain / rate
        period = 2.0 * (ramp + hold_s)
        t = np.arange(0.0, period * cycles, dt)
        phase = t % period
        strain = np.where(
            phase < ramp, rate * phase,
            np.where(phase < ramp + hold_s, max_strain,
                     np.where(phase < 2.0 * ramp + hold_s,
                              max_strain - rate * (phase - ramp - hold_s), 0.0)))
        velocity = np.gradient(strain, dt)
        dr = default_stretch_curve(strain) * (1.0 + rate_gain * velocity)
        if noise_band is not None:
            lo, hi = noise_band
            dr = dr + rng.uniform(lo, hi, size=len(dr))
        n_val_start = int(np.floor(len(t) * (1.0 - val_fraction)))
        for k in range(window, len(t) + 1):
            windows.append(features_from_window(dr[k - window:k]))
            targets.append(strain[k - 1])
            split.append("val" if k - 1 >= n_val_start else "train")
    windows = np.array(windows)
    targets = np.array(targets)
    split = np.array(split)
    return SequenceDataset(
        windows=windows, targets=targets,
        train_idx=np.flatnonzero(split == "train"),
        val_idx=np.flatnonzero(split == "val"),
    )


def _clipped_update(m: LstmModel, grads: dict, lr: float, clip: float) -> LstmModel:
    norm_sq = sum(float(np.sum(np.asarray(g) ** 2)) for g in grads.values())
    gnorm = np.sqrt(norm_sq)
    scale = lr * (clip / gnorm if (clip > 0 and gnorm > clip) else 1.0)
    updates = {name: getattr(m, name) - scale * grads[name] for name in _PARAM_NAMES}
    updates["b_out"] = float(updates["b_out"])
    return replace(m, **updates)


def train(data: SequenceDataset, learning_rate: float = 0.1, epochs: int = 200,
          seed: int = 0, hidden_size: int = 32, batch_size: int = 32,
          clip: float = 5.0) -> tuple[LstmModel, TrainReport]:
    """Mini-batch gradient descent; returns the best-validation model.

    Normalization statistics come from the training split only.  Loss is the
    MSE in normalized target space; histories start with the untrained model
    (epoch 0).  A non-finite loss aborts with DivergenceError naming the
    epoch.  Two runs with the same seed and data are bit-identical.
    """
    if len(data.train_idx) == 0 or len(data.val_idx) == 0:
        raise ModelFormatError("dataset needs nonempty train and validation splits")
    window = data.windows.shape[1]
    d = data.windows.shape[2]

    x_train = data.windows[data.train_idx]
    flat = x_train.reshape(-1, d)
    mean = flat.mean(axis=0)
    scale = flat.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    t_mean = float(data.targets[data.train_idx].mean())
    t_scale = float(data.targets[data.train_idx].std()) or 1.0
    norm = Normalization(input_mean=mean, input_scale=scale,
                         target_mean=t_mean, target_scale=t_scale,
                         input_low=flat.min(axis=0), input_high=flat.max(axis=0))

    m = init_model(input_size=d, hidden_size=hidden_size, window=window,
                   seed=seed, norm=norm)
    xn = _normalize_windows(m, data.windows)
    tn = (data.targets - t_mean) / t_scale
    tr, va = data.train_idx, data.val_idx

    rng = np.random.default_rng(seed)
    train_losses = [sequence_loss(m, xn[tr], tn[tr])]
    val_losses = [sequence_loss(m, xn[va], tn[va])]
    best = (val_losses[0], 0, m)

    order = np.arange(len(tr))
    for epoch in range(1, epochs + 1):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = tr[order[start:start + batch_size]]
            try:
                _, grads = _backward_batch(m, xn[batch], tn[batch])
            except DivergenceError as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}: {exc}", epoch=epoch
                ) from exc
            m = _clipped_update(m, grads, learning_rate, clip)
        tl = sequence_loss(m, xn[tr], tn[tr])
        vl = sequence_loss(m, xn[va], tn[va])
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}", epoch=epoch)
        train_losses.append(tl)
        val_losses.append(vl)
        if vl < best[0]:
            best = (vl, epoch, m)

    best_model = best[2]
    chunks = []
    for k in range(0, len(va), 512):
        y, _ = _forward_batch(best_model, xn[va[k:k + 512]])
        chunks.append(y)
    preds = np.concatenate(chunks) * t_scale + t_mean
    errors = preds - data.targets[va]
    counts, edges = np.histogram(errors, bins=41, range=(-0.2, 0.2))
    report = TrainReport(train_losses=train_losses, val_losses=val_losses,
                         best_epoch=best[1], error_bin_edges=edges,
                         error_bin_counts=counts)
    return best_model, report


def learning_rate_sweep(data: SequenceDataset, rates, epochs: int = 40,
                        seed: int = 0, **train_kw) -> list[tuple[float, float]]:
    """Train a fresh seeded model per learning rate; return (rate, best val loss).

    A diverging rate is recorded as +inf rather than aborting the sweep.
    """
    rates = list(rates)
    if not rates:
        raise ModelFormatError("learning-rate sweep needs at least one rate")
    table = []
    for rate in rates:
        try:
            _, report = train(data, learning_rate=rate, epochs=epochs,
                              seed=seed, **train_kw)
            table.append((rate, min(report.val_losses)))
        except DivergenceError:
            table.append((rate, float("inf")))
    return table


def save_model(m: LstmModel, path) -> None:
    m.validate_shapes()
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "D": m.input_size,
        "H": m.hidden_size,
        "window": m.window,
        "weights": {
            name: (np.asarray(getattr(m, name)).tolist()
                   if name != "b_out" else float(m.b_out))
            for name in _PARAM_NAMES
        },
        "norm": {
            "input_mean": [float(v) for v in m.norm.input_mean],
            "input_scale": [float(v) for v in m.norm.input_scale],
            "target_mean": m.norm.target_mean,
            "target_scale": m.norm.target_scale,
            "input_low": (None if m.norm.input_low is None
                          else [float(v) for v in m.norm.input_low]),
            "input_high": (None if m.norm.input_high is None
                           else [float(v) for v in m.norm.input_high]),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> LstmModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"unparseable model file {path}: {exc}") from exc
    try:
        if doc["version"] != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"model format version {doc['version']} unsupported "
                f"(expected {MODEL_FORMAT_VERSION})")
        w = doc["weights"]
        lo = doc["norm"].get("input_low")
        hi = doc["norm"].get("input_high")
        norm = Normalization(
            input_mean=np.array(doc["norm"]["input_mean"], dtype=float),
            input_scale=np.array(doc["norm"]["input_scale"], dtype=float),
            target_mean=float(doc["norm"]["target_mean"]),
            target_scale=float(doc["norm"]["target_scale"]),
            input_low=None if lo is None else np.array(lo, dtype=float),
            input_high=None if hi is None else np.array(hi, dtype=float),
        )
        m = LstmModel(
            input_size=int(doc["D"]), hidden_size=int(doc["H"]),
            window=int(doc["window"]),
            w_f=np.array(w["w_f"], dtype=float), b_f=np.array(w["b_f"], dtype=float),
            w_i=np.array(w["w_i"], dtype=float), b_i=np.array(w["b_i"], dtype=float),
            w_h=np.array(w["w_h"], dtype=float),
            w_o=np.array(w["w_o"], dtype=float), b_o=np.array(w["b_o"], dtype=float),
            w_out=np.array(w["w_out"], dtype=float), b_out=float(w["b_out"]),
            norm=norm,
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file {path}: {exc}") from exc
    m.validate_shapes()
    return m
