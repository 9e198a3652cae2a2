"""Dueling Q-network in plain numpy with a hand-written backward pass.

Value stream: per-cell [embedding(G_p) ; G_in] -> LSTM -> concat context
(P_m, O_m, L_j) -> dense layers -> V.
Advantage stream: context and the candidate slots (embedding looked up
without gradient, plus refs and meta-features) -> dense layers -> A.
Q = V + A - mean(A).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .primitives import catalog_hash

log = logging.getLogger(__name__)

DTYPE = np.float64


@dataclass
class NetConfig:
    n_primitives: int = 22
    embed_dim: int = 15
    lstm_size: int = 80
    value_layers: tuple[int, ...] = (256, 128, 32)
    adv_layers: tuple[int, ...] = (256, 128, 64, 32)
    n_actions: int = 6
    n_cells: int = 18
    n_inputs: int = 3
    ctx_len: int = 34
    cand_rest: int = 15  # ref slots + meta-features per candidate
    cand_slots: int = 6  # 0 in flat mode: no candidates in the input
    seed: int = 0

    def __post_init__(self):
        self.value_layers = tuple(self.value_layers)
        self.adv_layers = tuple(self.adv_layers)

    @property
    def embed_rows(self) -> int:
        return self.n_primitives + 2  # blank, primitives, unvisited sentinel

    @property
    def adv_in(self) -> int:
        return self.ctx_len + self.cand_slots * (self.embed_dim + self.cand_rest)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def huber(delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise clipped-quadratic loss and its derivative."""
    a = np.abs(delta)
    loss = np.where(a <= 1.0, 0.5 * delta**2, a - 0.5)
    return loss, np.clip(delta, -1.0, 1.0)


def dueling(V: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Q = V + A - mean(A) over the action axis."""
    return V[..., None] + A - A.mean(axis=-1, keepdims=True)


class QNetwork:
    def __init__(self, config: NetConfig, params: dict | None = None):
        self.config = config
        self.params = params if params is not None else self._init(config)

    @staticmethod
    def _init(cfg: NetConfig) -> dict:
        rng = np.random.default_rng(cfg.seed)
        p = {}

        def uniform(shape, fan_in):
            lim = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-lim, lim, size=shape).astype(DTYPE)

        p["E"] = rng.uniform(-0.05, 0.05, size=(cfg.embed_rows, cfg.embed_dim)).astype(DTYPE)
        d_in = cfg.embed_dim + cfg.n_inputs + cfg.lstm_size
        p["lstm_W"] = uniform((d_in, 4 * cfg.lstm_size), d_in)
        p["lstm_b"] = np.zeros(4 * cfg.lstm_size, DTYPE)
        prev = cfg.lstm_size + cfg.ctx_len
        for i, width in enumerate(cfg.value_layers + (1,)):
            p[f"v{i}_W"] = uniform((prev, width), prev)
            p[f"v{i}_b"] = np.zeros(width, DTYPE)
            prev = width
        prev = cfg.adv_in
        for i, width in enumerate(cfg.adv_layers + (cfg.n_actions,)):
            p[f"a{i}_W"] = uniform((prev, width), prev)
            p[f"a{i}_b"] = np.zeros(width, DTYPE)
            prev = width
        return p

    def copy(self) -> "QNetwork":
        return QNetwork(self.config, {k: v.copy() for k, v in self.params.items()})

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()

    # -- embedding ----------------------------------------------------------

    def _rows(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        rows = np.where(ids == -1, self.config.embed_rows - 1, ids)
        return rows

    def embed(self, ids, table: np.ndarray | None = None) -> np.ndarray:
        """Embedding rows for primitive ids; -1 is the unvisited sentinel,
        -2 (padding) maps to a zero vector."""
        ids = np.asarray(ids, dtype=np.int64)
        if np.any((ids < -2) | (ids > self.config.n_primitives)):
            raise IndexError(f"primitive id out of range: {ids}")
        E = self.params["E"] if table is None else table
        out = E[np.clip(self._rows(ids), 0, None)]
        return np.where((ids == -2)[..., None], 0.0, out)

    # -- forward ------------------------------------------------------------

    def _check(self, batch: dict):
        cfg = self.config
        B = batch["ctx"].shape[0]
        expect = {
            "gp": (B, cfg.n_cells),
            "gin": (B, cfg.n_cells, cfg.n_inputs),
            "ctx": (B, cfg.ctx_len),
            "ac_ids": (B, cfg.cand_slots),
            "ac_rest": (B, cfg.cand_slots, cfg.cand_rest),
        }
        for k, shape in expect.items():
            if batch[k].shape != shape:
                raise ValueError(f"{k}: expected shape {shape}, got {batch[k].shape}")

    def _adv_input(self, batch, table=None):
        B = batch["ctx"].shape[0]
        if self.config.cand_slots == 0:
            return batch["ctx"]
        cand = np.concatenate([self.embed(batch["ac_ids"], table), batch["ac_rest"]], axis=2)
        return np.concatenate([batch["ctx"], cand.reshape(B, -1)], axis=1)

    def _dense(self, x, prefix, n_layers, cache):
        for i in range(n_layers):
            z = x @ self.params[f"{prefix}{i}_W"] + self.params[f"{prefix}{i}_b"]
            last = i == n_layers - 1
            if cache is not None:
                cache.append((x, z))
            x = z if last else np.maximum(z, 0.0)
        return x

    def advantages(self, batch: dict) -> np.ndarray:
        self._check(batch)
        return self._dense(self._adv_input(batch), "a", len(self.config.adv_layers) + 1, None)

    def forward(self, batch: dict, record: bool = False, adv_table: np.ndarray | None = None):
        """Returns (V (B,), A (B, n), Q (B, n)) and a cache when ``record``.

        ``adv_table`` substitutes the embedding the advantage stream reads;
        gradient checks pass a frozen copy since that read is not differentiated.
        """
        self._check(batch)
        cfg = self.config
        p = self.params
        H = cfg.lstm_size
        B = batch["ctx"].shape[0]
        X = np.concatenate([self.embed(batch["gp"]), batch["gin"]], axis=2)  # (B, T, D+N_in)
        h = np.zeros((B, H), DTYPE)
        c = np.zeros((B, H), DTYPE)
        steps = []
        for t in range(cfg.n_cells):
            xh = np.concatenate([X[:, t], h], axis=1)
            z = xh @ p["lstm_W"] + p["lstm_b"]
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H : 2 * H])
            o = _sigmoid(z[:, 2 * H : 3 * H])
            g = np.tanh(z[:, 3 * H :])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            if record:
                steps.append((xh, i, f, o, g, c_prev, tc))
        vcache = [] if record else None
        acache = [] if record else None
        V = self._dense(np.concatenate([h, batch["ctx"]], axis=1), "v", len(cfg.value_layers) + 1, vcache)[:, 0]
        A = self._dense(self._adv_input(batch, adv_table), "a", len(cfg.adv_layers) + 1, acache)
        Q = dueling(V, A)
        cache = {"steps": steps, "v": vcache, "a": acache, "gp": batch["gp"]} if record else None
        return V, A, Q, cache

    def q_values(self, batch: dict) -> np.ndarray:
        return self.forward(batch)[2]

    # -- backward -----------------------------------------------------------

    def _dense_back(self, grads, prefix, cache, dout):
        n = len(cache)
        for i in reversed(range(n)):
            x, z = cache[i]
            if i != n - 1:
                dout = dout * (z > 0)
            grads[f"{prefix}{i}_W"] = x.T @ dout
            grads[f"{prefix}{i}_b"] = dout.sum(0)
            dout = dout @ self.params[f"{prefix}{i}_W"].T
        return dout

    def backward(self, cache: dict, dQ: np.ndarray) -> dict:
        """Gradients of sum(dQ * Q) w.r.t. every parameter."""
        cfg = self.config
        H = cfg.lstm_size
        D = cfg.embed_dim
        grads = {}
        dV = dQ.sum(axis=1)
        dA = dQ - dQ.mean(axis=1, keepdims=True)
        # the advantage stream reads the embedding without differentiating it
        self._dense_back(grads, "a", cache["a"], dA)
        dvin = self._dense_back(grads, "v", cache["v"], dV[:, None])
        dh = dvin[:, :H]
        dc = np.zeros_like(dh)
        W = self.params["lstm_W"]
        dW = np.zeros_like(W)
        db = np.zeros_like(self.params["lstm_b"])
        dE = np.zeros_like(self.params["E"])
        gp_rows = self._rows(cache["gp"])
        for t in reversed(range(cfg.n_cells)):
            xh, i, f, o, g, c_prev, tc = cache["steps"][t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc**2)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc = dc * f
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g**2)], axis=1
            )
            dW += xh.T @ dz
            db += dz.sum(0)
            dxh = dz @ W.T
            dh = dxh[:, -H:]
            np.add.at(dE, gp_rows[:, t], dxh[:, :D])
        grads["lstm_W"] = dW
        grads["lstm_b"] = db
        grads["E"] = dE
        return grads

    # -- persistence --------------------------------------------------------

    def save(self, directory, extra: dict | None = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "config": asdict(self.config),
            "catalog_hash": catalog_hash(),
            "dtype": "<f8",
            "tensors": {k: list(v.shape) for k, v in self.params.items()},
        }
        if extra:
            manifest.update(extra)
        for k, v in self.params.items():
            v.astype("<f8").tofile(directory / f"{k}.bin")
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "QNetwork":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest["catalog_hash"] != catalog_hash():
            raise ValueError("checkpoint was trained against a different primitive catalog")
        cfg = NetConfig(**manifest["config"])
        params = {}
        for k, shape in manifest["tensors"].items():
            params[k] = np.fromfile(directory / f"{k}.bin", dtype="<f8").reshape(shape).astype(DTYPE)
        return cls(cfg, params)


class Adam:
    def __init__(self, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8, sparse=("E",)):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.sparse = set(sparse)
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0
        self.skipped = 0

    def step(self, params: dict, grads: dict) -> bool:
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            log.warning("non-finite gradient, update skipped")
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            if k in self.sparse:
                # lazy rows: an embedding row moves only when it received gradient
                rows = np.flatnonzero(np.any(g != 0, axis=1))
                m, v = self.m[k][rows], self.v[k][rows]
                gr = g[rows]
            else:
                rows = slice(None)
                m, v, gr = self.m[k], self.v[k], g
            m = b1 * m + (1 - b1) * gr
            v = b2 * v + (1 - b2) * gr * gr
            self.m[k][rows] = m
            self.v[k][rows] = v
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            params[k][rows] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return True


def stack_states(states, n_slots: int) -> dict:
    """Batch a list of StateVectors into network inputs."""
    B = len(states)
    batch = {
        "gp": np.stack([s.gp for s in states]),
        "gin": np.stack([s.gin for s in states]),
        "ctx": np.stack([s.ctx for s in states]),
    }
    if n_slots:
        batch["ac_ids"] = np.stack([s.ac_ids for s in states])
        batch["ac_rest"] = np.stack([s.ac_rest for s in states])
    else:
        rest = states[0].ac_rest.shape[-1] if B else 0
        batch["ac_ids"] = np.zeros((B, 0), np.int64)
        batch["ac_rest"] = np.zeros((B, 0, rest))
    return batch
