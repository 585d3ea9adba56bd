"""Tabular denoising-diffusion generator for mixed continuous/categorical data.

Continuous columns are transform-standardized and diffused with Gaussian
noise; categorical columns are corrupted toward the uniform distribution
and denoised with a cross-entropy head. A single joint MLP denoiser with a
sinusoidal timestep embedding serves both heads. Everything runs in plain
numpy with explicit analytic gradients (Adam or momentum SGD, EMA weights),
which keeps training single-threaded, seed-deterministic, and
finite-difference checkable.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .cohort import CohortTable, inverse_transform_monetary, transform_monetary

__all__ = [
    "DiffusionConfig",
    "NoiseSchedule",
    "GenerativeModel",
    "gaussian_noising",
    "multinomial_noising",
    "fit_diffusion",
    "sample_twins",
    "save_model",
    "load_model",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DiffusionConfig:
    timesteps: int = 1000
    noise_schedule: str = "cosine"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    epochs: int = 3000
    batch_size: int = 256
    hidden_layout: tuple[int, ...] = (256, 256, 256)
    learning_rate: float = 2e-3
    momentum: float = 0.9
    optimizer: str = "adam"
    lr_decay: bool = True
    ema_decay: float = 0.999
    predict: str = "eps"  # numeric head target: "eps" or "x0"
    time_embed_dim: int = 32
    clip_x0: float = 8.0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if any(w < 1 for w in self.hidden_layout):
            raise ValueError("all hidden widths must be >= 1")
        if self.noise_schedule not in ("linear", "cosine"):
            raise ValueError(f"unknown noise schedule {self.noise_schedule!r}")
        if self.optimizer not in ("adam", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.predict not in ("eps", "x0"):
            raise ValueError(f"unknown prediction target {self.predict!r}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be an even integer >= 2")

    def to_dict(self) -> dict:
        return {
            "timesteps": self.timesteps, "noise_schedule": self.noise_schedule,
            "beta_start": self.beta_start, "beta_end": self.beta_end,
            "epochs": self.epochs, "batch_size": self.batch_size,
            "hidden_layout": list(self.hidden_layout),
            "learning_rate": self.learning_rate, "momentum": self.momentum,
            "optimizer": self.optimizer, "lr_decay": self.lr_decay,
            "ema_decay": self.ema_decay, "predict": self.predict,
            "time_embed_dim": self.time_embed_dim, "clip_x0": self.clip_x0,
            "grad_clip": self.grad_clip,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiffusionConfig":
        doc = dict(doc)
        doc["hidden_layout"] = tuple(doc.get("hidden_layout", (256, 256, 256)))
        return cls(**doc)


class NoiseSchedule:
    """Beta schedule with cumulative products; abar[0] == 1 by convention,
    abar[t] for t = 1..T."""

    def __init__(self, cfg: DiffusionConfig):
        T = cfg.timesteps
        if cfg.noise_schedule == "linear":
            scale = 1000.0 / T
            betas = np.linspace(scale * cfg.beta_start, scale * cfg.beta_end, T)
        else:
            s = 0.008
            x = np.linspace(0.0, T, T + 1)
            ac = np.cos(((x / T) + s) / (1 + s) * np.pi / 2.0) ** 2
            ac = ac / ac[0]
            betas = 1.0 - ac[1:] / ac[:-1]
        self.betas = np.clip(betas, 1e-8, 0.999)
        self.alphas = 1.0 - self.betas
        self.abar = np.concatenate(([1.0], np.cumprod(self.alphas)))
        self.T = T

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]")
        return t


def gaussian_noising(x0, t, eps, schedule: NoiseSchedule):
    """Forward corruption sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    t = schedule.check_t(t)
    abar = schedule.abar[t]
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    a = np.sqrt(abar)
    b = np.sqrt(1.0 - abar)
    if x0.ndim == 2 and np.ndim(a) == 1:
        a, b = a[:, None], b[:, None]
    return a * x0 + b * eps


def multinomial_noising(onehot, t, rng: np.random.Generator, schedule: NoiseSchedule):
    """With probability (1 - abar_t), replace the category by a uniform draw
    over the K categories; returns a valid one-hot vector."""
    t = int(schedule.check_t(t))
    v = np.asarray(onehot, dtype=np.float64)
    if v.ndim != 1 or not np.all((v == 0.0) | (v == 1.0)) or v.sum() != 1.0:
        raise ValueError("input is not a valid one-hot vector")
    K = len(v)
    beta_bar = 1.0 - schedule.abar[t]
    if rng.uniform() < beta_bar:
        out = np.zeros(K)
        out[rng.integers(0, K)] = 1.0
        return out
    return v.copy()


def _sinusoidal_embedding(t, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class Denoiser:
    """Fully connected ReLU network; returns eps predictions for the numeric
    block and logits per categorical block."""

    def __init__(self, in_dim: int, hidden: tuple[int, ...], out_dim: int,
                 rng: np.random.Generator):
        dims = [in_dim, *hidden, out_dim]
        self.weights = []
        self.biases = []
        for a, b in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / a)
            self.weights.append(rng.normal(0.0, scale, size=(a, b)))
            self.biases.append(np.zeros(b))

    @property
    def params(self):
        return list(self.weights) + list(self.biases)

    def forward(self, x: np.ndarray):
        acts = [x]
        h = x
        L = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < L - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out):
        """Gradients of the loss wrt every weight and bias, given d loss/d out."""
        L = len(self.weights)
        gW = [None] * L
        gb = [None] * L
        delta = d_out
        for i in range(L - 1, -1, -1):
            gW[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0.0)
        return gW, gb


class _Optimizer:
    """Momentum SGD or Adam with global-norm gradient clipping and optional
    cosine learning-rate decay (10% floor)."""

    def __init__(self, config: DiffusionConfig, denoiser: Denoiser):
        self.cfg = config
        self.net = denoiser
        zeros = lambda: ([np.zeros_like(W) for W in denoiser.weights],
                         [np.zeros_like(b) for b in denoiser.biases])
        self.mW, self.mb = zeros()
        if config.optimizer == "adam":
            self.vW, self.vb = zeros()
            self.t = 0

    def update(self, gW, gb, lr_frac: float):
        cfg = self.cfg
        gnorm = np.sqrt(sum(float((g**2).sum()) for g in gW + gb))
        scale = min(1.0, cfg.grad_clip / gnorm) if gnorm > 0 else 1.0
        lr = cfg.learning_rate
        if cfg.lr_decay:
            lr *= 0.1 + 0.9 * 0.5 * (1.0 + np.cos(np.pi * min(lr_frac, 1.0)))
        if cfg.optimizer == "momentum":
            for i in range(len(self.net.weights)):
                self.mW[i] = cfg.momentum * self.mW[i] - lr * scale * gW[i]
                self.mb[i] = cfg.momentum * self.mb[i] - lr * scale * gb[i]
                self.net.weights[i] += self.mW[i]
                self.net.biases[i] += self.mb[i]
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.t += 1
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for i in range(len(self.net.weights)):
            for g, m, v, p in ((scale * gW[i], self.mW[i], self.vW[i],
                                self.net.weights[i]),
                               (scale * gb[i], self.mb[i], self.vb[i],
                                self.net.biases[i])):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


@dataclass
class ColumnState:
    """Per-column encoding: gaussian (transform + standardization constants
    and training support, used to clip samples) or multinomial (category
    count)."""

    name: str
    kind: str  # "gaussian" | "multinomial"
    transform: str | None = None
    mean: float = 0.0
    sd: float = 1.0
    z_min: float = -1e30
    z_max: float = 1e30
    n_categories: int = 0
    binary_levels: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name, "kind": self.kind, "transform": self.transform,
            "mean": self.mean, "sd": self.sd,
            "z_min": self.z_min, "z_max": self.z_max,
            "n_categories": self.n_categories,
            "binary_levels": list(self.binary_levels) if self.binary_levels else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ColumnState":
        doc = dict(doc)
        if doc.get("binary_levels"):
            doc["binary_levels"] = tuple(doc["binary_levels"])
        return cls(**doc)


@dataclass
class GenerativeModel:
    denoiser: Denoiser
    config: DiffusionConfig
    schedule: NoiseSchedule
    column_state: list[ColumnState]
    schema: tuple
    train_loss_trace: list[float] = field(default_factory=list)

    @property
    def num_names(self):
        return [c.name for c in self.column_state if c.kind == "gaussian"]

    @property
    def cat_states(self):
        return [c for c in self.column_state if c.kind == "multinomial"]


def _build_column_state(table: CohortTable) -> list[ColumnState]:
    states = []
    for spec in table.schema:
        if spec.kind == "continuous":
            vals = table.values(spec.name)
            lat = transform_monetary(vals, spec.transform) if spec.transform else vals
            sd = float(lat.std())
            sd = sd if sd > 0 else 1.0
            mean = float(lat.mean())
            states.append(ColumnState(
                name=spec.name, kind="gaussian", transform=spec.transform,
                mean=mean, sd=sd,
                z_min=float((lat.min() - mean) / sd),
                z_max=float((lat.max() - mean) / sd),
            ))
        elif spec.kind == "binary":
            states.append(ColumnState(
                name=spec.name, kind="multinomial", n_categories=2,
                binary_levels=(0.0, 1.0),
            ))
        else:
            states.append(ColumnState(
                name=spec.name, kind="multinomial",
                n_categories=len(spec.categories),
            ))
    return states


def _encode_table(table: CohortTable, states: list[ColumnState]):
    """(n, d_num) standardized latent block and list of (n,) code arrays."""
    num_cols, cat_codes = [], []
    for st in states:
        vals = table.values(st.name)
        if st.kind == "gaussian":
            lat = transform_monetary(vals, st.transform) if st.transform else vals
            num_cols.append((np.asarray(lat, dtype=np.float64) - st.mean) / st.sd)
        elif st.binary_levels is not None:
            cat_codes.append((vals != 0.0).astype(np.int64))
        else:
            cat_codes.append(vals.astype(np.int64))
    x_num = np.column_stack(num_cols) if num_cols else np.empty((table.n, 0))
    return x_num, cat_codes


def _onehot(codes: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((len(codes), K))
    out[np.arange(len(codes)), codes] = 1.0
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def diffusion_loss_and_grads(denoiser: Denoiser, x_in, num_target, cat_targets,
                             d_num: int, cat_sizes):
    """Joint loss (numeric-head MSE + mean categorical cross-entropy) and
    analytic parameter gradients for one batch. ``num_target`` is the noise
    vector under eps-parametrization or the clean signal under
    x0-parametrization."""
    out, acts = denoiser.forward(x_in)
    B = x_in.shape[0]
    d_out = np.zeros_like(out)
    loss = 0.0

    if d_num > 0:
        pred = out[:, :d_num]
        diff = pred - num_target
        loss += float((diff**2).mean())
        d_out[:, :d_num] = 2.0 * diff / (B * d_num)

    if cat_sizes:
        off = d_num
        n_cols = len(cat_sizes)
        for K, target in zip(cat_sizes, cat_targets):
            logits = out[:, off:off + K]
            probs = _softmax(logits)
            ll = -np.log(np.clip(probs[np.arange(B), target], 1e-300, None))
            loss += float(ll.mean()) / n_cols
            grad = probs
            grad[np.arange(B), target] -= 1.0
            d_out[:, off:off + K] = grad / (B * n_cols)
            off += K

    gW, gb = denoiser.backward(acts, d_out)
    return loss, gW, gb


def fit_diffusion(table: CohortTable, config: DiffusionConfig,
                  rng: np.random.Generator) -> GenerativeModel:
    """Train the joint denoiser on a complete cohort.

    Raises RuntimeError with the epoch index if the loss leaves the finite
    range (training divergence).
    """
    if table.has_missing:
        raise ValueError("diffusion training requires a complete table")
    if table.n < config.batch_size:
        raise ValueError(
            f"n={table.n} smaller than batch_size={config.batch_size}"
        )
    states = _build_column_state(table)
    x_num, cat_codes = _encode_table(table, states)
    n, d_num = x_num.shape
    cat_sizes = [st.n_categories for st in states if st.kind == "multinomial"]
    d_cat = int(sum(cat_sizes))
    d_in = d_num + d_cat + config.time_embed_dim
    d_out = d_num + d_cat

    schedule = NoiseSchedule(config)
    denoiser = Denoiser(d_in, config.hidden_layout, d_out, rng)
    opt = _Optimizer(config, denoiser)
    ema_W = [np.zeros_like(W) for W in denoiser.weights]
    ema_b = [np.zeros_like(b) for b in denoiser.biases]

    trace = []
    T = config.timesteps
    total_steps = max(config.epochs * max(n // config.batch_size, 1), 1)
    step = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n - config.batch_size + 1, config.batch_size):
            rows = perm[start:start + config.batch_size]
            B = len(rows)
            t = rng.integers(1, T + 1, size=B)
            abar = schedule.abar[t]

            eps = rng.standard_normal((B, d_num)) if d_num else np.empty((B, 0))
            x_num_t = np.sqrt(abar)[:, None] * x_num[rows] + \
                np.sqrt(1.0 - abar)[:, None] * eps

            cat_blocks, cat_targets = [], []
            for K, codes in zip(cat_sizes, cat_codes):
                c0 = codes[rows]
                corrupt = rng.uniform(size=B) < (1.0 - abar)
                repl = rng.integers(0, K, size=B)
                ct = np.where(corrupt, repl, c0)
                cat_blocks.append(_onehot(ct, K))
                cat_targets.append(c0)

            temb = _sinusoidal_embedding(t, config.time_embed_dim)
            x_in = np.concatenate([x_num_t, *cat_blocks, temb], axis=1)
            num_target = x_num[rows] if config.predict == "x0" else eps

            loss, gW, gb = diffusion_loss_and_grads(
                denoiser, x_in, num_target, cat_targets, d_num, cat_sizes)
            if not np.isfinite(loss):
                raise RuntimeError(f"training diverged at epoch {epoch}: loss={loss}")

            lr_frac = step / total_steps
            opt.update(gW, gb, lr_frac)
            if config.ema_decay > 0.0:
                d = config.ema_decay
                for i in range(len(denoiser.weights)):
                    ema_W[i] = d * ema_W[i] + (1 - d) * denoiser.weights[i]
                    ema_b[i] = d * ema_b[i] + (1 - d) * denoiser.biases[i]
            step += 1
            epoch_loss += loss
            n_batches += 1
        trace.append(epoch_loss / max(n_batches, 1))

    if config.ema_decay > 0.0:
        # debias the moving average the same way Adam debiases its moments
        corr = 1.0 - config.ema_decay ** max(step, 1)
        denoiser.weights = [W / corr for W in ema_W]
        denoiser.biases = [b / corr for b in ema_b]

    return GenerativeModel(
        denoiser=denoiser, config=config, schedule=schedule,
        column_state=states, schema=table.schema, train_loss_trace=trace,
    )


def _reverse_sample(model: GenerativeModel, n: int, rng: np.random.Generator):
    """Ancestral sampling; returns (n, d_num) latents and per-column codes."""
    cfg = model.config
    sch = model.schedule
    d_num = len(model.num_names)
    cat_sizes = [st.n_categories for st in model.cat_states]
    gauss = [st for st in model.column_state if st.kind == "gaussian"]
    z_lo = np.array([max(st.z_min, -cfg.clip_x0) for st in gauss])
    z_hi = np.array([min(st.z_max, cfg.clip_x0) for st in gauss])

    x = rng.standard_normal((n, d_num)) if d_num else np.empty((n, 0))
    codes = [rng.integers(0, K, size=n) for K in cat_sizes]

    for t in range(sch.T, 0, -1):
        abar_t = sch.abar[t]
        abar_prev = sch.abar[t - 1]
        alpha_t = sch.alphas[t - 1]
        beta_t = sch.betas[t - 1]

        temb = _sinusoidal_embedding(np.full(n, t), cfg.time_embed_dim)
        cat_blocks = [_onehot(c, K) for c, K in zip(codes, cat_sizes)]
        x_in = np.concatenate([x, *cat_blocks, temb], axis=1)
        out, _ = model.denoiser.forward(x_in)

        if d_num:
            if cfg.predict == "x0":
                x0_hat = out[:, :d_num]
            else:
                eps_hat = out[:, :d_num]
                x0_hat = (x - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
            x0_hat = np.clip(x0_hat, z_lo, z_hi)
            mean = (np.sqrt(abar_prev) * beta_t / (1.0 - abar_t)) * x0_hat + \
                (np.sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t)) * x
            if t > 1:
                var = beta_t * (1.0 - abar_prev) / (1.0 - abar_t)
                x = mean + np.sqrt(var) * rng.standard_normal((n, d_num))
            else:
                x = mean

        off = d_num
        for ci, K in enumerate(cat_sizes):
            logits = out[:, off:off + K]
            p0 = _softmax(logits)
            like = np.full((n, K), (1.0 - alpha_t) / K)
            like[np.arange(n), codes[ci]] += alpha_t
            Z = (1.0 - abar_prev) / K + abar_prev * like
            w = p0 / Z
            posterior = like * ((1.0 - abar_prev) / K * w.sum(axis=1, keepdims=True)
                                + abar_prev * w)
            posterior /= posterior.sum(axis=1, keepdims=True)
            cum = np.cumsum(posterior, axis=1)
            u = rng.uniform(size=(n, 1))
            codes[ci] = (u > cum).sum(axis=1).clip(0, K - 1)
            off += K
    return x, codes


def sample_twins(model: GenerativeModel, n: int, rng: np.random.Generator,
                 balance_arms: bool = False,
                 treatment_positive: str = "yes") -> CohortTable:
    """Sample a synthetic cohort from the trained generator.

    With ``balance_arms=True``, oversamples and trims so each treatment arm
    contributes exactly n // 2 rows (requires the generator to produce both
    arms; raises after a bounded number of attempts otherwise).
    """
    schema = model.schema
    if n == 0:
        cols = {}
        for spec in schema:
            if spec.kind == "categorical":
                cols[spec.name] = np.empty(0, dtype=np.int32)
            else:
                cols[spec.name] = np.empty(0)
        return CohortTable(schema, cols, np.zeros((0, len(schema)), dtype=bool),
                           provenance="synthetic")

    if not balance_arms:
        x_num, codes = _reverse_sample(model, n, rng)
        return _decode(model, x_num, codes)

    treat_name = [c.name for c in schema if c.role == "treatment"][0]
    treat_spec = [c for c in schema if c.role == "treatment"][0]
    cat_names = [st.name for st in model.cat_states]
    tj = cat_names.index(treat_name)
    if treat_spec.kind == "categorical":
        pos_code = treat_spec.categories.index(treatment_positive)
    else:
        pos_code = 1
    per_arm = n // 2
    kept_x, kept_codes = [], []
    counts = {0: 0, 1: 0}
    for _ in range(50):
        want = 2 * per_arm - counts[0] - counts[1]
        if want <= 0:
            break
        x_num, codes = _reverse_sample(model, max(want * 2, 64), rng)
        is_pos = (codes[tj] == pos_code).astype(int)
        for arm in (0, 1):
            need = per_arm - counts[arm]
            rows = np.nonzero(is_pos == arm)[0][:need]
            if len(rows):
                kept_x.append(x_num[rows])
                kept_codes.append([c[rows] for c in codes])
                counts[arm] += len(rows)
    if counts[0] < per_arm or counts[1] < per_arm:
        raise RuntimeError(
            f"balance_arms: generator produced arms {counts}, "
            f"needed {per_arm} per arm"
        )
    x_num = np.concatenate(kept_x, axis=0)
    codes = [np.concatenate([kc[j] for kc in kept_codes]) for j in range(len(cat_names))]
    return _decode(model, x_num, codes)


def _decode(model: GenerativeModel, x_num: np.ndarray, codes) -> CohortTable:
    schema = model.schema
    n = x_num.shape[0] if x_num.ndim == 2 else len(codes[0])
    cols = {}
    ni, ci = 0, 0
    for st in model.column_state:
        if st.kind == "gaussian":
            lat = x_num[:, ni] * st.sd + st.mean
            vals = inverse_transform_monetary(lat, st.transform) if st.transform else lat
            cols[st.name] = vals
            ni += 1
        else:
            code = codes[ci].astype(np.int32)
            if st.binary_levels is not None:
                cols[st.name] = np.array(st.binary_levels)[code]
            else:
                cols[st.name] = code
            ci += 1
    mask = np.zeros((n, len(schema)), dtype=bool)
    return CohortTable(schema, cols, mask, provenance="synthetic")


# -- checkpoint io -----------------------------------------------------------


def save_model(model: GenerativeModel, path) -> None:
    """Serialize to a versioned npz: header JSON + parameter arrays."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "column_state": [st.to_dict() for st in model.column_state],
        "schema": [
            {
                "name": c.name, "kind": c.kind, "role": c.role,
                "categories": list(c.categories), "unit": c.unit,
                "transform": c.transform, "missing_codes": list(c.missing_codes),
            }
            for c in model.schema
        ],
        "train_loss_trace": model.train_loss_trace,
        "n_layers": len(model.denoiser.weights),
    }
    arrays = {}
    for i, (W, b) in enumerate(zip(model.denoiser.weights, model.denoiser.biases)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8),
        **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> GenerativeModel:
    from .cohort import ColumnSpec

    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        if header["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {header['format_version']}"
            )
        config = DiffusionConfig.from_dict(header["config"])
        states = [ColumnState.from_dict(d) for d in header["column_state"]]
        schema = tuple(
            ColumnSpec(
                name=c["name"], kind=c["kind"], role=c["role"],
                categories=tuple(c["categories"]), unit=c["unit"],
                transform=c["transform"], missing_codes=tuple(c["missing_codes"]),
            )
            for c in header["schema"]
        )
        n_layers = header["n_layers"]
        denoiser = Denoiser.__new__(Denoiser)
        denoiser.weights = [data[f"W{i}"].copy() for i in range(n_layers)]
        denoiser.biases = [data[f"b{i}"].copy() for i in range(n_layers)]
    model = GenerativeModel(
        denoiser=denoiser, config=config, schedule=NoiseSchedule(config),
        column_state=states, schema=schema,
        train_loss_trace=list(header["train_loss_trace"]),
    )
    return model
