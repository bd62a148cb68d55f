"""Matplotlib renderings of the delimited outputs.

Every figure sits next to the CSV/PGM it visualizes; the CSV stays the
authoritative record, the PNG is for eyeballing.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def training_curves(report, path):
    fig, (ax_loss, ax_err) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [r.epoch for r in report.records]
    ax_loss.plot(epochs, [r.cmmd for r in report.records], label="cmmd")
    ax_loss.plot(epochs, [r.ae for r in report.records], label="ae")
    if any(r.conf for r in report.records):
        ax_loss.plot(epochs, [r.conf for r in report.records], label="conf")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss component")
    ax_loss.legend(frameon=False)
    ax_err.plot(epochs, [r.test_error for r in report.records], color="tab:red")
    ax_err.set_xlabel("epoch")
    ax_err.set_ylabel("test error")
    ax_err.set_ylim(bottom=0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_curve(axis_name, values, errors, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(values, errors, marker="o")
    if all(v > 0 for v in values):
        ax.set_xscale("log")
    ax.set_xlabel(axis_name)
    ax.set_ylabel("final test error")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def histogram_figure(hist, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    centers = (hist.bin_edges[:-1] + hist.bin_edges[1:]) / 2.0
    width = hist.bin_edges[1] - hist.bin_edges[0]
    ax.bar(centers, hist.count_diff, width=width, alpha=0.6, label="different class")
    ax.bar(centers, hist.count_same, width=width, alpha=0.6, label="same class")
    ax.set_xlabel("kernel value")
    ax.set_ylabel("pair count")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def heatmap_figure(h, path):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(h, cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
