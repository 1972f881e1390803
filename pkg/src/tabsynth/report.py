"""Figure rendering for the report path.

Every evaluation writes its figures next to the delimited outputs so a run
directory is self-describing. The Agg backend keeps rendering headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def render_mle_scores(report, path):
    """Bar chart of per-model scores from an MleReport."""
    families = sorted(report.per_model)
    scores = [report.per_model[f] for f in families]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(range(len(families)), scores, color=["#4878cf", "#6acc65"], width=0.6)
    ax.set_xticks(range(len(families)))
    ax.set_xticklabels([f.replace("_", " ") for f in families])
    ax.set_ylabel(report.metric_name)
    ax.set_title(f"{report.task} on {report.n_synth_rows} synthetic rows")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sampling_stats(stats, path):
    """Bar chart of accepted rows and per-reason rejections."""
    labels = ["accepted"] + sorted(stats.rejected_by_reason)
    values = [stats.accepted] + [stats.rejected_by_reason[r] for r in sorted(stats.rejected_by_reason)]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(labels)), 3.2))
    colors = ["#6acc65"] + ["#d65f5f"] * (len(labels) - 1)
    ax.bar(range(len(labels)), values, color=colors, width=0.6)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("rows")
    ax.set_title(f"rejection sampling: {stats.attempts} attempts")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_epoch_series(series, metric_name, path):
    """Line chart of checkpoint epoch vs MLE score per model family.

    `series` is a list of {"epoch": int, "scores": {family: score}} entries;
    entries without scores (checkpoints whose sampling was exhausted) are
    skipped.
    """
    scored = [entry for entry in series if "scores" in entry]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    epochs = [entry["epoch"] for entry in scored]
    families = sorted(scored[0]["scores"]) if scored else []
    for family in families:
        ax.plot(
            epochs,
            [entry["scores"][family] for entry in scored],
            marker="o",
            label=family.replace("_", " "),
        )
    ax.set_xlabel("fine-tuning epoch")
    ax.set_ylabel(metric_name)
    ax.set_title("score by training checkpoint")
    if families:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
