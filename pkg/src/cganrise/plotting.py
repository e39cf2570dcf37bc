"""SVG figures for episode traces and training curves."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_tracking(trace, path):
    """Joint angles against the desired trajectory."""
    t = trace.t
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for i, ax in enumerate(axes, start=1):
        ax.plot(t, trace.col(f"xd{i}"), "k--", lw=1, label="desired")
        ax.plot(t, trace.col(f"q{i}"), lw=1, label="measured")
        ax.set_ylabel(f"q{i} [rad]")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="upper right")
    axes[0].set_title(f"{trace.scenario} / {trace.variant}")
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_control(trace, path):
    t = trace.t
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for i in (1, 2):
        ax.plot(t, trace.col(f"u{i}"), lw=1, label=f"u{i}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("torque [N m]")
    ax.set_title(f"{trace.scenario} / {trace.variant}")
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_training(curve, path):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(curve.epoch, curve.loss_g, label="generator")
    a1.plot(curve.epoch, curve.loss_d, label="discriminator")
    a1.set_xlabel("epoch")
    a1.set_ylabel("loss")
    a1.legend()
    a2.plot(curve.epoch, curve.real_score, label="real")
    a2.plot(curve.epoch, curve.fake_score, label="generated")
    a2.axhspan(0.4, 0.6, color="0.9")
    a2.set_xlabel("epoch")
    a2.set_ylabel("mean D score")
    a2.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
