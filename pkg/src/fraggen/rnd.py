"""Random network distillation over graph embeddings.

A frozen random map is the target; a trainable twin chases it.  Prediction
error on a state is the novelty signal, normalized by the moments of a ring
buffer of recent errors and clipped.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass
class RndConfig:
    in_dim: int
    out_dim: int = 8
    eta: float = 5.0
    lr: float = 2e-3
    buffer_capacity: int = 5000


@dataclass
class RndParams:
    target_w: ad.Tensor
    target_b: ad.Tensor
    pred_w: ad.Tensor
    pred_b: ad.Tensor

    def named(self) -> dict[str, ad.Tensor]:
        return {
            "rnd.target.w": self.target_w,
            "rnd.target.b": self.target_b,
            "rnd.predictor.w": self.pred_w,
            "rnd.predictor.b": self.pred_b,
        }


def init_rnd(cfg: RndConfig, rng: np.random.Generator) -> RndParams:
    scale = 1.0 / np.sqrt(cfg.in_dim)
    tw = rng.normal(0.0, scale, size=(cfg.in_dim, cfg.out_dim))
    tb = rng.normal(0.0, 0.1, size=cfg.out_dim)
    pw = rng.normal(0.0, scale, size=(cfg.in_dim, cfg.out_dim))
    pb = rng.normal(0.0, 0.1, size=cfg.out_dim)
    params = RndParams(
        target_w=ad.constant(tw), target_b=ad.constant(tb),
        pred_w=ad.parameter(pw, name="rnd.predictor.w"),
        pred_b=ad.parameter(pb, name="rnd.predictor.b"),
    )
    return params


class ErrorBuffer:
    """Ring buffer of recent prediction errors with recomputed moments."""

    def __init__(self, capacity: int = 5000):
        self._buf: deque[float] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._buf)

    def push(self, err: float) -> None:
        self._buf.append(float(err))

    def moments(self) -> tuple[float, float]:
        """(mean, second central moment) over current contents."""
        arr = np.fromiter(self._buf, dtype=np.float64, count=len(self._buf))
        if arr.size == 0:
            return 0.0, 0.0
        m = float(arr.mean())
        v = float(((arr - m) ** 2).mean())
        return m, v


def _forward(emb: np.ndarray, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.add_bias(ad.matmul(ad.constant(emb), w), b)


def prediction_errors(embs: np.ndarray, params: RndParams) -> np.ndarray:
    """Euclidean distance between predictor and target outputs, per row."""
    with ad.no_grad():
        pred = _forward(embs, params.pred_w, params.pred_b).data
        targ = _forward(embs, params.target_w, params.target_b).data
    return np.linalg.norm(pred - targ, axis=1)


def prediction_error(emb: np.ndarray, params: RndParams) -> float:
    return float(prediction_errors(emb.reshape(1, -1), params)[0])


def innovation_reward(err: float, buffer: ErrorBuffer, eta: float = 5.0) -> float:
    """Buffer-normalized, clipped novelty; zero until the buffer has two
    entries."""
    if len(buffer) < 2:
        return 0.0
    m, v = buffer.moments()
    if v == 0.0:
        if err == m:
            return 0.0
        return eta if err > m else -eta
    return float(np.clip((err - m) / np.sqrt(v), -eta, eta))


class RndExplorer:
    """Bundles the network pair, its optimizer and the error buffer."""

    def __init__(self, cfg: RndConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params = init_rnd(cfg, rng)
        self.buffer = ErrorBuffer(cfg.buffer_capacity)
        self.opt = ad.Adam([self.params.pred_w, self.params.pred_b], lr=cfg.lr)

    def rewards(self, embs: np.ndarray) -> np.ndarray:
        """Innovation rewards in input order; each error is normalized by
        the buffer of strictly earlier errors, then pushed."""
        errs = prediction_errors(embs, self.params)
        out = np.empty_like(errs)
        for i, e in enumerate(errs):
            out[i] = innovation_reward(float(e), self.buffer, self.cfg.eta)
            self.buffer.push(float(e))
        return out

    def update(self, embs: np.ndarray) -> float:
        """One optimizer step on the mean prediction error of the batch."""
        if embs.shape[0] == 0:
            raise ValueError("empty RND update batch")
        pred = _forward(embs, self.params.pred_w, self.params.pred_b)
        with ad.no_grad():
            targ = _forward(embs, self.params.target_w, self.params.target_b)
        diff = ad.sub(pred, ad.constant(targ.data))
        sq = ad.row_sum(ad.mul(diff, diff))
        loss = ad.reduce_mean(ad.elementwise_activation(sq, "sqrt"))
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        return loss.item()
