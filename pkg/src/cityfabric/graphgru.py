"""Graph-weighted GRU for multi-step junction-count forecasting.

One recurrent layer. At each lag step the input count vector and the hidden
state are mixed over the coarse graph through a row-normalized, weight-
scaled adjacency (self-loops included), then passed through standard GRU
gates; a linear head maps the final hidden state to all horizon steps at
once. Everything is numpy with hand-written backprop-through-time; tests
check the analytic gradients against central finite differences.

Inputs/targets are standardized by train-set mean/std; missing target cells
are excluded from the loss, missing inputs are fed as raw zeros.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DivergenceDetected, ShapeMismatch
from .graph import CoarseGraph

_PARAM_KEYS = ("U_r", "U_z", "U_c", "W_r", "W_z", "W_c", "b_r", "b_z", "b_c", "W_o", "b_o")


def normalized_adjacency(cg: CoarseGraph) -> np.ndarray:
    """Row-normalized (A_w + I) where A_w sums super-edge weights."""
    ids = {v: i for i, v in enumerate(cg.vertex_ids)}
    n = len(ids)
    a = np.eye(n)
    for e in cg.super_edges:
        i, j = ids[e.u], ids[e.v]
        a[i, j] += e.weight
        a[j, i] += e.weight
    return a / a.sum(axis=1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class GraphGRULite:
    """Desk-scale graph-convolutional GRU (hidden size 32 by default)."""

    model_id = "graphgru-lite"

    def __init__(
        self,
        cg: CoarseGraph | np.ndarray,
        lag_minutes: int = 5,
        horizon_steps: int = 5,
        hidden: int = 32,
        seed: int = 7,
        lr: float = 0.01,
        epochs: int = 30,
        batch_size: int = 32,
        lr_decay: float = 0.93,  # per-epoch multiplier; quiets late epochs
    ):
        self.adj = cg if isinstance(cg, np.ndarray) else normalized_adjacency(cg)
        self.n = self.adj.shape[0]
        self.lag_minutes = lag_minutes
        self.horizon_steps = horizon_steps
        self.hidden = hidden
        self.seed = seed
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_decay = lr_decay
        self.mu = 0.0
        self.sigma = 1.0
        rng = np.random.default_rng(seed)
        h = hidden
        s = horizon_steps

        def glorot(shape):
            bound = np.sqrt(6.0 / sum(shape))
            return rng.uniform(-bound, bound, size=shape)

        self.params: dict[str, np.ndarray] = {
            "U_r": glorot((2, h)),
            "U_z": glorot((2, h)),
            "U_c": glorot((2, h)),
            "W_r": glorot((h, h)),
            "W_z": glorot((h, h)),
            "W_c": glorot((h, h)),
            "b_r": np.zeros(h),
            "b_z": np.zeros(h),
            "b_c": np.zeros(h),
            "W_o": glorot((h, s)),
            "b_o": np.zeros(s),
        }

    # -- forward / backward -------------------------------------------------

    def _forward(self, x: np.ndarray, keep_cache: bool = False):
        """x: [B, T, N] standardized. Returns ([B, N, S] output, cache)."""
        p = self.params
        b, t_len, n = x.shape
        if n != self.n:
            raise ShapeMismatch(f"input has {n} junctions, adjacency has {self.n}")
        h = np.zeros((b, n, self.hidden))
        cache = []
        for t in range(t_len):
            x_t = x[:, t, :, None]  # [B,N,1]
            xa_t = np.matmul(self.adj, x_t)
            xc = np.concatenate([x_t, xa_t], axis=2)  # [B,N,2]
            ha = np.matmul(self.adj, h)
            r = _sigmoid(xc @ p["U_r"] + ha @ p["W_r"] + p["b_r"])
            z = _sigmoid(xc @ p["U_z"] + ha @ p["W_z"] + p["b_z"])
            rha = r * ha
            c = np.tanh(xc @ p["U_c"] + rha @ p["W_c"] + p["b_c"])
            h_new = (1.0 - z) * h + z * c
            if keep_cache:
                cache.append((xc, ha, r, z, c, h))
            h = h_new
        y = h @ p["W_o"] + p["b_o"]  # [B,N,S]
        return y, (cache, h)

    def loss_and_grads(self, x: np.ndarray, y_true: np.ndarray, y_mask: np.ndarray):
        """Masked MSE and gradients for every parameter.

        x: [B,T,N] standardized inputs; y_true: [B,N,S] standardized targets;
        y_mask: [B,N,S] bool, True where the target is valid.
        """
        p = self.params
        y_hat, (cache, h_last) = self._forward(x, keep_cache=True)
        n_valid = max(int(y_mask.sum()), 1)
        diff = np.where(y_mask, y_hat - y_true, 0.0)
        loss = float(np.sum(diff**2) / n_valid)
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        d_y = 2.0 * diff / n_valid  # [B,N,S]
        grads["W_o"] = np.tensordot(h_last, d_y, axes=([0, 1], [0, 1]))
        grads["b_o"] = d_y.sum(axis=(0, 1))
        d_h = d_y @ p["W_o"].T  # [B,N,H]

        for xc, ha, r, z, c, h_prev in reversed(cache):
            d_z = d_h * (c - h_prev)
            d_c = d_h * z
            d_hprev = d_h * (1.0 - z)

            d_cpre = d_c * (1.0 - c**2)
            grads["U_c"] += np.tensordot(xc, d_cpre, axes=([0, 1], [0, 1]))
            grads["W_c"] += np.tensordot(r * ha, d_cpre, axes=([0, 1], [0, 1]))
            grads["b_c"] += d_cpre.sum(axis=(0, 1))
            d_rha = d_cpre @ p["W_c"].T
            d_r = d_rha * ha
            d_ha = d_rha * r

            d_rpre = d_r * r * (1.0 - r)
            grads["U_r"] += np.tensordot(xc, d_rpre, axes=([0, 1], [0, 1]))
            grads["W_r"] += np.tensordot(ha, d_rpre, axes=([0, 1], [0, 1]))
            grads["b_r"] += d_rpre.sum(axis=(0, 1))
            d_ha += d_rpre @ p["W_r"].T

            d_zpre = d_z * z * (1.0 - z)
            grads["U_z"] += np.tensordot(xc, d_zpre, axes=([0, 1], [0, 1]))
            grads["W_z"] += np.tensordot(ha, d_zpre, axes=([0, 1], [0, 1]))
            grads["b_z"] += d_zpre.sum(axis=(0, 1))
            d_ha += d_zpre @ p["W_z"].T

            # ha = adj @ h_prev, so the hidden path pulls adj^T back through
            d_h = d_hprev + np.matmul(self.adj.T, d_ha)

        return loss, grads

    # -- training -------------------------------------------------------------

    @staticmethod
    def make_windows(history: np.ndarray, lag: int, horizon_steps: int, step: int = 1):
        """Rolling (X, Y) pairs from [junction x minute] history."""
        n, t = history.shape
        span = horizon_steps * step
        origins = range(lag - 1, t - span)
        xs, ys = [], []
        for o in origins:
            xs.append(history[:, o - lag + 1 : o + 1].T)  # [T,N]
            ys.append(np.stack([history[:, o + (h + 1) * step] for h in range(horizon_steps)], axis=1))
        return np.array(xs), np.array(ys)  # [B,T,N], [B,N,S]

    def fit(self, history: np.ndarray, mask: np.ndarray | None = None) -> list[float]:
        """Adam training over rolling windows. Returns per-epoch train RMSE
        in original count units. Raises DivergenceDetected on non-finite loss."""
        if history.ndim != 2 or history.shape[0] != self.n:
            raise ShapeMismatch(
                f"history must be [{self.n} x minutes], got {history.shape}"
            )
        t = history.shape[1]
        if t < self.lag_minutes + self.horizon_steps:
            raise ShapeMismatch("history shorter than lag + horizon")
        self.mu = float(history.mean())
        self.sigma = float(history.std()) or 1.0
        std_hist = (history - self.mu) / self.sigma
        x_all, y_all = self.make_windows(std_hist, self.lag_minutes, self.horizon_steps)
        if mask is not None:
            _, m_y = self.make_windows((~mask).astype(float), self.lag_minutes, self.horizon_steps)
            y_mask = m_y > 0.5
        else:
            y_mask = np.ones_like(y_all, dtype=bool)

        rng = np.random.default_rng(self.seed + 1)
        m_adam = {k: np.zeros_like(v) for k, v in self.params.items()}
        v_adam = {k: np.zeros_like(v) for k, v in self.params.items()}
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step_count = 0
        curve: list[float] = []
        n_windows = x_all.shape[0]
        for epoch in range(self.epochs):
            lr_t = self.lr * self.lr_decay**epoch
            order = rng.permutation(n_windows)
            for lo in range(0, n_windows, self.batch_size):
                idx = order[lo : lo + self.batch_size]
                loss, grads = self.loss_and_grads(x_all[idx], y_all[idx], y_mask[idx])
                if not np.isfinite(loss):
                    raise DivergenceDetected(
                        "training loss became non-finite",
                        seed=self.seed,
                        config={"lr": self.lr, "epoch": epoch, "hidden": self.hidden},
                    )
                step_count += 1
                for k in self.params:
                    m_adam[k] = beta1 * m_adam[k] + (1 - beta1) * grads[k]
                    v_adam[k] = beta2 * v_adam[k] + (1 - beta2) * grads[k] ** 2
                    m_hat = m_adam[k] / (1 - beta1**step_count)
                    v_hat = v_adam[k] / (1 - beta2**step_count)
                    self.params[k] -= lr_t * m_hat / (np.sqrt(v_hat) + eps)
            y_hat, _ = self._forward(x_all)
            diff = np.where(y_mask, y_hat - y_all, 0.0)
            rmse_std = float(np.sqrt(np.sum(diff**2) / max(int(y_mask.sum()), 1)))
            curve.append(rmse_std * self.sigma)
        return curve

    def predict(self, lag: np.ndarray, horizon_steps: int) -> np.ndarray:
        """[junction x lag] window -> [horizon_steps x junction] raw counts."""
        if horizon_steps != self.horizon_steps:
            raise ShapeMismatch(
                f"model was trained for {self.horizon_steps} steps, asked for {horizon_steps}"
            )
        if lag.shape != (self.n, self.lag_minutes):
            raise ShapeMismatch(
                f"lag tensor must be [{self.n} x {self.lag_minutes}], got {lag.shape}"
            )
        x = ((lag - self.mu) / self.sigma).T[None, :, :]  # [1,T,N]
        y, _ = self._forward(x)
        return (y[0] * self.sigma + self.mu).T  # [S,N]

    # -- checkpointing -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Flat f64 parameter vector + JSON header, per the model-checkpoint format."""
        path = Path(path)
        flat = np.concatenate([self.params[k].ravel() for k in _PARAM_KEYS])
        header = {
            "model_id": self.model_id,
            "shapes": {k: list(self.params[k].shape) for k in _PARAM_KEYS},
            "seed": self.seed,
            "lag_minutes": self.lag_minutes,
            "horizon_steps": self.horizon_steps,
            "hidden": self.hidden,
            "mu": self.mu,
            "sigma": self.sigma,
            "n_junctions": self.n,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=1))
        flat.astype("<f8").tofile(path)

    def load_weights(self, path: str | Path) -> None:
        path = Path(path)
        header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        flat = np.fromfile(path, dtype="<f8")
        self.mu = header["mu"]
        self.sigma = header["sigma"]
        pos = 0
        for k in _PARAM_KEYS:
            shape = tuple(header["shapes"][k])
            size = int(np.prod(shape))
            self.params[k] = flat[pos : pos + size].reshape(shape)
            pos += size
        if pos != flat.size:
            raise ShapeMismatch("checkpoint size does not match parameter shapes")
