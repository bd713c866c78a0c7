"""Supervised encoder pretraining on (graph, scalar target) datasets.

Dataset files are concatenated ATG v1 records, each followed by a line
``y <target>``.  Training regresses the encoder's scalar head onto the
targets with a fixed 90/10 train/validation split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import sgat
from .graphs import AttributedGraph, GraphFormatError, _parse_record, serialize_graph
from .graphs import inverse_distance

log = logging.getLogger("fraggen")


def save_dataset(path, pairs) -> None:
    with open(path, "w") as fh:
        for g, y in pairs:
            fh.write(serialize_graph(g))
            fh.write(f"y {format(float(y), '.9g')}\n")


def load_dataset(path) -> list[tuple[AttributedGraph, float]]:
    with open(path) as fh:
        lines = [ln for ln in fh.read().split("\n") if ln.strip()]
    out, pos = [], 0
    while pos < len(lines):
        g, pos = _parse_record(lines, pos)
        if pos >= len(lines) or not lines[pos].startswith("y "):
            raise GraphFormatError(f"record at line {pos + 1} missing target line")
        out.append((g, float(lines[pos].split()[1])))
        pos += 1
    return out


def make_geometry_dataset(n: int, rng: np.random.Generator,
                          n_nodes=(7, 7), n_labels: int = 1,
                          edge_dim: int = 1) -> list[tuple[AttributedGraph, float]]:
    """Random trees over random point clouds; the target is the mean
    pairwise inverse distance.

    Coordinates are rescaled to unit mean pairwise distance so the target is
    a pure shape statistic: the spatial propagation normalizes away global
    scale (Eq.-style symmetric normalization is scale-invariant), and with
    one node label and a fixed size the adjacency branch carries no signal
    about it at all.
    """
    out = []
    for _ in range(n):
        size = int(rng.integers(n_nodes[0], n_nodes[1] + 1))
        edges = []
        for v in range(1, size):
            edges.append((int(rng.integers(0, v)), v))
        attrs = np.ones((len(edges), edge_dim))
        coords = rng.uniform(-2.0, 2.0, size=(size, 3))
        if size > 1:
            d = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
            coords = coords / d[~np.eye(size, dtype=bool)].mean()
        g = AttributedGraph(
            labels=tuple(int(x) for x in rng.integers(0, n_labels, size)),
            coords=coords,
            edges=tuple(sorted(edges)),
            edge_attrs=attrs,
        )
        G = inverse_distance(g)
        target = G.sum() / (size * (size - 1)) if size > 1 else 0.0
        out.append((g, float(target)))
    return out


@dataclass
class PretrainConfig:
    epochs: int = 30
    minibatch: int = 64
    lr: float = 1e-3
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class PretrainResult:
    params: sgat.EncoderParams
    history: list[tuple[int, float, float]]   # (epoch, train_loss, val_loss)

    def named_params(self) -> dict:
        return self.params.named()


def _mse(pred: ad.Tensor, target: np.ndarray) -> ad.Tensor:
    diff = ad.sub(pred, ad.constant(target.reshape(-1, 1)))
    return ad.reduce_mean(ad.mul(diff, diff))


def pretrain(pairs, enc_cfg: sgat.EncoderConfig, cfg: PretrainConfig,
             csv_path: Path | None = None) -> PretrainResult:
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("pretraining needs at least two examples")
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((cfg.seed, 0x5E7))))
    enc_cfg.out_dim = 1
    params = sgat.init_encoder(enc_cfg, rng)
    order = rng.permutation(len(pairs))
    n_val = max(1, int(round(cfg.val_fraction * len(pairs))))
    val_idx, train_idx = order[:n_val], order[n_val:]
    cache = sgat.PackCache(enc_cfg)
    graphs = [g for g, _ in pairs]
    targets = np.array([y for _, y in pairs])
    opt = ad.Adam([p for p in params.named().values()], lr=cfg.lr)

    def eval_loss(idx) -> float:
        batch = sgat.pack_graphs([graphs[i] for i in idx], enc_cfg, cache)
        with ad.no_grad():
            pred = sgat.encode_batch(batch, params, enc_cfg)
        return float(np.mean((pred.data[:, 0] - targets[idx]) ** 2))

    history = []
    if csv_path is not None:
        Path(csv_path).write_text("epoch,train_loss,val_loss\n")
    for epoch in range(1, cfg.epochs + 1):
        sh = rng.permutation(train_idx)
        losses = []
        for lo in range(0, len(sh), cfg.minibatch):
            idx = sh[lo:lo + cfg.minibatch]
            batch = sgat.pack_graphs([graphs[i] for i in idx], enc_cfg, cache)
            pred = sgat.encode_batch(batch, params, enc_cfg)
            loss = _mse(pred, targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        row = (epoch, float(np.mean(losses)), eval_loss(val_idx))
        history.append(row)
        log.info("pretrain epoch %d train %.5f val %.5f", *row)
        if csv_path is not None:
            with open(csv_path, "a") as fh:
                fh.write(f"{row[0]},{format(row[1], '.9g')},"
                         f"{format(row[2], '.9g')}\n")
    return PretrainResult(params=params, history=history)
