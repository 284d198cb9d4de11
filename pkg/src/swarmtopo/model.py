"""Latent ODE regression model over sequences of diagram vectors.

An attention encoder reads irregularly observed vectors and parametrises a
Gaussian over the initial latent state. A sample is pushed through a learned
vector field with the Euler method, decoded back to observation space, and a
second attention module summarises the latent path into parameter estimates.
The "w/o dynamics" baseline feeds observations straight into that head.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASK_BIAS = -1e9

# number of integrate() calls made in this process
INTEGRATE_CALLS = 0


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, lr: float, parts: dict):
        detail = ", ".join(f"{k}={v:.4g}" for k, v in parts.items())
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}, lr {lr:.3g} ({detail})")
        self.epoch, self.batch, self.lr = epoch, batch, lr


@dataclass
class ModelConfig:
    input_dim: int
    n_targets: int
    latent_dim: int = 20
    n_ref: int = 16
    embed_dim: int = 32
    attn_dim: int = 32
    enc_hidden: int = 64
    ode_hidden: int = 64
    dec_hidden: int = 64
    reg_width: int = 32
    reg_times: int = 32
    euler_steps: int = 50
    dynamics: bool = True
    baseline_width: int | None = None  # None: matched to the dynamic variant
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 64
    lambda_reg: float = 1.0
    elbo_weight: float | None = None  # None: 1 / observed entries per batch
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------- data

@dataclass
class SequenceBatch:
    """Padded sequences: times (B, T) in [0, 1], values (B, T, d), mask (B, T)."""
    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    targets: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
        if not np.all(self.mask.any(axis=1)):
            raise ValueError("every sequence needs at least one observed time point")

    def __len__(self) -> int:
        return self.times.shape[0]

    def take(self, idx) -> "SequenceBatch":
        t = None if self.targets is None else self.targets[idx]
        return SequenceBatch(self.times[idx], self.values[idx], self.mask[idx], t)

    @property
    def observed_values(self) -> np.ndarray:
        return np.where(self.mask[..., None], self.values, 0.0)


def make_batch(times_list, values_list, targets=None) -> SequenceBatch:
    """Pad variable-length sequences; repeated time stamps are merged by averaging."""
    rows = []
    for t, v in zip(times_list, values_list):
        t = np.asarray(t, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64).reshape(len(t), -1)
        uniq, inv = np.unique(t, return_inverse=True)
        if len(uniq) < len(t):
            acc = np.zeros((len(uniq), v.shape[1]))
            np.add.at(acc, inv, v)
            v = acc / np.bincount(inv)[:, None]
        rows.append((uniq, v))
    T = max(len(t) for t, _ in rows)
    d = rows[0][1].shape[1]
    times = np.zeros((len(rows), T))
    values = np.zeros((len(rows), T, d))
    mask = np.zeros((len(rows), T), dtype=bool)
    for i, (t, v) in enumerate(rows):
        times[i, :len(t)] = t
        values[i, :len(t)] = v
        mask[i, :len(t)] = True
    return SequenceBatch(times, values, mask, targets)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, mask: np.ndarray | None = None) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, x.shape[-1])
        if mask is not None:
            flat = flat[np.asarray(mask, dtype=bool).reshape(-1)]
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


# ---------------------------------------------------------------- layers

class Params(dict):
    """Ordered name -> parameter tensor registry."""

    def new(self, name: str, array) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name}")
        t = ad.parameter(array)
        self[name] = t
        return t

    def count(self) -> int:
        return sum(p.size for p in self.values())


class Linear:
    def __init__(self, params: Params, name: str, n_in: int, n_out: int, rng, init: str = "he"):
        if init == "zero":
            w = np.zeros((n_in, n_out))
        else:
            gain = 2.0 if init == "he" else 1.0
            w = rng.normal(0.0, math.sqrt(gain / n_in), size=(n_in, n_out))
        self.W = params.new(f"{name}.W", w)
        self.b = params.new(f"{name}.b", np.zeros(n_out))

    def __call__(self, x):
        return x @ self.W + self.b


class TimeEmbedding:
    """One linear and ``dim - 1`` sinusoidal channels with learned frequency and phase."""

    def __init__(self, params: Params, name: str, dim: int, rng):
        self.w0 = params.new(f"{name}.w0", rng.normal(0.0, 1.0, size=(1, 1)))
        self.b0 = params.new(f"{name}.b0", np.zeros(1))
        self.w = params.new(f"{name}.w", rng.normal(0.0, 10.0, size=(1, dim - 1)))
        self.b = params.new(f"{name}.b", rng.uniform(0.0, 2 * np.pi, size=dim - 1))

    def __call__(self, t: np.ndarray) -> Tensor:
        t = ad.tensor(np.asarray(t, dtype=np.float64)[..., None])
        return ad.concat([t * self.w0 + self.b0, ad.sin(t * self.w + self.b)], axis=-1)


class MultiTimeAttention:
    """Fixed reference times attend over observed time points.

    Returns one softmax-weighted average of the values per reference time.
    Masked keys get an additive ``-1e9`` so their weight is exactly zero.
    """

    def __init__(self, params: Params, name: str, n_ref: int, embed_dim: int, attn_dim: int, rng):
        self.ref = np.linspace(0.0, 1.0, n_ref)
        self.embed = TimeEmbedding(params, f"{name}.embed", embed_dim, rng)
        scale = 1.0 / math.sqrt(embed_dim)
        self.Wq = params.new(f"{name}.Wq", rng.normal(0.0, scale, size=(embed_dim, attn_dim)))
        self.Wk = params.new(f"{name}.Wk", rng.normal(0.0, scale, size=(embed_dim, attn_dim)))
        self.attn_dim = attn_dim

    def weights(self, times: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        q = self.embed(self.ref) @ self.Wq                        # (H, a)
        k = self.embed(times) @ self.Wk                            # (B, T, a)
        scores = (q @ ad.transpose(k, (0, 2, 1))) / math.sqrt(self.attn_dim)
        if mask is not None:
            scores = scores + np.where(mask, 0.0, MASK_BIAS)[:, None, :]
        return ad.softmax(scores)                                  # (B, H, T)

    def __call__(self, times, values, mask=None) -> Tensor:
        return self.weights(times, mask) @ values


class MLP:
    def __init__(self, params: Params, name: str, sizes, rng, act="relu"):
        self.act = ad.relu if act == "relu" else ad.tanh
        init = "he" if act == "relu" else "lecun"
        n = len(sizes) - 1
        self.layers = [Linear(params, f"{name}.{i}", sizes[i], sizes[i + 1], rng,
                              "zero" if i == n - 1 else init) for i in range(n)]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = self.act(layer(x))
        return self.layers[-1](x)


class RegressionHead:
    """Attention summary of a sequence, per-reference relu map, mean pool, linear out."""

    def __init__(self, params: Params, name: str, in_dim: int, width: int, n_out: int, cfg: ModelConfig, rng):
        self.attn = MultiTimeAttention(params, f"{name}.attn", cfg.n_ref, cfg.embed_dim, cfg.attn_dim, rng)
        self.hidden = Linear(params, f"{name}.hidden", in_dim, width, rng, "he")
        self.out = Linear(params, f"{name}.out", width, n_out, rng, "zero")

    def summary(self, times, values, mask=None) -> Tensor:
        h = ad.relu(self.hidden(self.attn(times, values, mask)))
        return ad.mean(h, axis=1)

    def __call__(self, times, values, mask=None) -> Tensor:
        return self.out(self.summary(times, values, mask))


# ---------------------------------------------------------------- math pieces

def integrate(z0: Tensor, vector_field, query_times, steps: int = 50) -> list:
    """Euler flow of ``z0`` on [0, 1] read off at ``query_times``.

    The solver grid is ``steps`` equal intervals merged with the query times,
    so every query time is hit exactly. Returns one state per query time.
    """
    global INTEGRATE_CALLS
    INTEGRATE_CALLS += 1
    q = np.asarray(query_times, dtype=np.float64)
    if q.ndim != 1 or np.any(np.diff(q) < 0) or (q.size and (q[0] < 0 or q[-1] > 1)):
        raise ValueError("query times must be sorted and inside [0, 1]")
    grid = np.union1d(np.linspace(0.0, 1.0, steps + 1), q)
    states = {0.0: z0}
    z = z0
    for t_prev, t_next in zip(grid[:-1], grid[1:]):
        z = z + vector_field(z) * float(t_next - t_prev)
        states[float(t_next)] = z
    return [states[float(t)] for t in q]


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)) per row."""
    return 0.5 * ad.sum(mu * mu + ad.exp(logvar) - logvar - 1.0, axis=-1)


def reparametrize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    return mu + ad.exp(logvar * 0.5) * eps


def _stack(states: list) -> Tensor:
    return ad.concat([ad.reshape(s, (1,) + s.shape) for s in states], axis=0)


# ---------------------------------------------------------------- model

class LatentDynamicsModel:
    def __init__(self, config: ModelConfig):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.seed)
        self.params = Params()
        p = self.params
        if cfg.dynamics:
            self.enc_attn = MultiTimeAttention(p, "enc.attn", cfg.n_ref, cfg.embed_dim, cfg.attn_dim, rng)
            self.enc_mlp = MLP(p, "enc.mlp", [cfg.n_ref * cfg.input_dim, cfg.enc_hidden, 2 * cfg.latent_dim], rng)
            self.field = MLP(p, "ode", [cfg.latent_dim, cfg.ode_hidden, cfg.latent_dim], rng, act="tanh")
            self.decoder = MLP(p, "dec", [cfg.latent_dim, cfg.dec_hidden, cfg.input_dim], rng)
            self.head = RegressionHead(p, "reg", cfg.latent_dim, cfg.reg_width, cfg.n_targets, cfg, rng)
        else:
            width = cfg.baseline_width or matched_baseline_width(cfg)
            self.head = RegressionHead(p, "reg", cfg.input_dim, width, cfg.n_targets, cfg, rng)
        self.reg_grid = np.linspace(0.0, 1.0, cfg.reg_times)

    @property
    def n_params(self) -> int:
        return self.params.count()

    def head_params(self) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith("reg.")}

    # -- pieces
    def encode(self, batch: SequenceBatch):
        cfg = self.config
        att = self.enc_attn(batch.times, batch.observed_values, batch.mask)
        out = self.enc_mlp(ad.reshape(att, (len(batch), cfg.n_ref * cfg.input_dim)))
        z = cfg.latent_dim
        return out[:, :z], out[:, z:]

    def latent_path(self, z0: Tensor, query_times) -> list:
        return integrate(z0, self.field, query_times, self.config.euler_steps)

    def regress_path(self, states: Tensor) -> Tensor:
        """``states`` is (B, E, z) on the equidistant regression grid."""
        B = states.shape[0]
        times = np.broadcast_to(self.reg_grid, (B, len(self.reg_grid)))
        return self.head(times, states)

    def _forward_dynamic(self, batch: SequenceBatch, eps: np.ndarray | None):
        mu, logvar = self.encode(batch)
        z0 = mu if eps is None else reparametrize(mu, logvar, eps)
        obs_times = np.unique(batch.times[batch.mask])
        query = np.union1d(obs_times, self.reg_grid)
        stacked = _stack(self.latent_path(z0, query))             # (Q, B, z)
        B = len(batch)
        reg_idx = np.searchsorted(query, self.reg_grid)
        reg_states = ad.transpose(stacked[reg_idx], (1, 0, 2))
        pred = self.regress_path(reg_states)
        obs_idx = np.where(batch.mask, np.searchsorted(query, batch.times), 0)
        obs_states = stacked[obs_idx, np.arange(B)[:, None]]       # (B, T, z)
        return mu, logvar, obs_states, pred

    def predict(self, batch: SequenceBatch) -> np.ndarray:
        """Parameter estimates (standardised scale); the posterior mean is used as z0."""
        if self.config.dynamics:
            return self._forward_dynamic(batch, None)[3].data
        return self.head(batch.times, batch.observed_values, batch.mask).data

    def loss(self, batch: SequenceBatch, rng: np.random.Generator, *, lambda_reg: float = 1.0,
             elbo_weight: float | None = None):
        """Total loss tensor and a dict of float parts (elbo, recon, kl, reg_mse)."""
        if self.config.dynamics:
            eps = rng.standard_normal((len(batch), self.config.latent_dim))
            mu, logvar, obs_states, pred = self._forward_dynamic(batch, eps)
            recon = self.decoder(obs_states)
            weight_mask = batch.mask[..., None].astype(np.float64)
            sse = ad.sum(ad.squared_error(recon, batch.observed_values) * weight_mask)
            kl = ad.sum(kl_standard_normal(mu, logvar))
            elbo = 0.5 * sse + kl
            if elbo_weight is None:
                elbo_weight = 1.0 / (batch.mask.sum() * self.config.input_dim)
            total = elbo * elbo_weight
            parts = {"elbo": elbo.item() / len(batch), "recon": 0.5 * sse.item() / len(batch),
                     "kl": kl.item() / len(batch)}
        else:
            pred = self.head(batch.times, batch.observed_values, batch.mask)
            total = None
            parts = {"elbo": 0.0, "recon": 0.0, "kl": 0.0}
        if lambda_reg and batch.targets is not None:
            mse = ad.mean(ad.squared_error(pred, batch.targets))
            total = mse * lambda_reg if total is None else total + mse * lambda_reg
            parts["reg_mse"] = mse.item()
        else:
            parts["reg_mse"] = float(np.mean((pred.data - batch.targets) ** 2)) if batch.targets is not None else 0.0
        if total is None:
            raise ValueError("nothing to optimise: regression weight is 0 and the model has no dynamics")
        parts["total"] = total.item()
        return total, parts

    # -- state
    def state_arrays(self) -> dict:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict) -> None:
        for k, p in self.params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != p.shape:
                raise ValueError(f"parameter {k}: stored shape {a.shape} != {p.shape}")
            p.data = a.copy()


def dynamic_param_count(cfg: ModelConfig) -> int:
    c = ModelConfig(**{**asdict(cfg), "dynamics": True})
    return LatentDynamicsModel(c).n_params


def matched_baseline_width(cfg: ModelConfig) -> int:
    """Head width giving the baseline about as many parameters as the dynamic model."""
    target = dynamic_param_count(cfg)
    e, a = cfg.embed_dim, cfg.attn_dim
    fixed = 2 * e + 2 * e * a + cfg.n_targets       # embedding, Wq, Wk, output bias
    per_width = cfg.input_dim + 1 + cfg.n_targets   # hidden W column + bias + output W row
    return max(1, round((target - fixed) / per_width))


# ---------------------------------------------------------------- training

def train(model: LatentDynamicsModel, data: SequenceBatch, config: TrainConfig, *, log=None,
          optimizer: ad.Adam | None = None, start_epoch: int = 0) -> list:
    """Minimise the weighted ELBO plus regression MSE; returns per-epoch history rows."""
    names = list(model.params)
    opt = optimizer or ad.Adam(list(model.params.values()), lr=config.lr,
                               weight_decay=config.weight_decay, names=names)
    ss = np.random.SeedSequence(config.seed)
    shuffle_rng, noise_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    # keep the streams aligned when resuming
    for _ in range(start_epoch):
        shuffle_rng.permutation(len(data))
    history = []
    n = len(data)
    for epoch in range(start_epoch, config.epochs):
        lr = ad.cosine_lr(epoch, config.epochs, config.lr)
        order = shuffle_rng.permutation(n)
        sums: dict = {}
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = data.take(order[start:start + config.batch_size])
            ad.zero_grad(model.params.values())
            total, parts = model.loss(batch, noise_rng, lambda_reg=config.lambda_reg,
                                      elbo_weight=config.elbo_weight)
            if not np.isfinite(parts["total"]):
                raise TrainingDiverged(epoch, b, lr, parts)
            ad.backward(total)
            opt.step(lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * len(batch)
        row = {"epoch": epoch, "lr": lr, **{k: v / n for k, v in sums.items()}}
        history.append(row)
        if log is not None:
            log(row)
    model.optimizer = opt
    return history
