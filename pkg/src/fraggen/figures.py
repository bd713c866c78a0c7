"""Figure rendering for run reports.

Every renderer takes rows already written to the CSV next to it, draws a
small matplotlib figure and saves a PNG; callers treat figures as optional
side outputs of the report path.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def training_figure(history, out_png: Path) -> Path:
    it = [r.iteration for r in history]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(it, [r.mean_reward for r in history], label="mean")
    axes[0].plot(it, [r.best_reward for r in history], label="best")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("terminal reward")
    axes[0].legend()
    axes[1].plot(it, [r.actor_loss for r in history], label="actor")
    axes[1].plot(it, [r.critic_loss for r in history], label="critic")
    axes[1].plot(it, [r.entropy for r in history], label="entropy")
    axes[1].set_xlabel("iteration")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return Path(out_png)


def pretrain_figure(history, out_png: Path) -> Path:
    ep = [r[0] for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ep, [r[1] for r in history], label="train")
    ax.plot(ep, [r[2] for r in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return Path(out_png)


def score_histogram(scores, out_png: Path, title: str = "scores") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(list(scores), bins=24)
    ax.set_xlabel(title)
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return Path(out_png)


def constrained_figure(rows, out_png: Path) -> Path:
    """rows: (delta, improvement mean, improvement std, sim mean, sim std)."""
    deltas = [r[0] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].errorbar(deltas, [r[1] for r in rows], yerr=[r[2] for r in rows],
                     marker="o")
    axes[0].set_xlabel("delta")
    axes[0].set_ylabel("improvement")
    axes[1].errorbar(deltas, [r[3] for r in rows], yerr=[r[4] for r in rows],
                     marker="o", color="tab:orange")
    axes[1].set_xlabel("delta")
    axes[1].set_ylabel("similarity to start")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return Path(out_png)
