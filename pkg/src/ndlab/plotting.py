"""Figures for the CLI report (matplotlib, Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {"figure.dpi": 110, "font.size": 9, "axes.grid": True, "grid.alpha": 0.3, "savefig.bbox": "tight"}
# fixed metadata keeps PNG bytes reproducible
_META = {"Software": "ndlab"}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_carleman_ratio(data, path):
    """Minimum Carleman ratio against ``h`` for each scan, log-log."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for label, vals in sorted(data["curves"].items()):
            ax.loglog(data["h_list"], vals, "o-", ms=3, lw=1, label=label)
        ax.set_xlabel("h")
        ax.set_ylabel("min ratio over probes")
        ax.set_title("Boundary Carleman ratio")
        ax.legend(fontsize=6, ncol=2)
        return _save(fig, path)


def plot_cgo_decay(data, path):
    """Remainder norm against ``h`` with the fitted power laws."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for part, pts in sorted(data["series"].items()):
            hs, rs = np.array(pts).T
            fit = data["fits"][part]
            line = ax.loglog(hs, rs, "o", ms=4, label=f"{part}: slope {fit['slope']:.3f}")[0]
            hh = np.linspace(hs.min(), hs.max(), 20)
            ax.loglog(hh, np.exp(fit["intercept"]) * hh ** fit["slope"], "-", lw=1, color=line.get_color())
        ax.set_xlabel("h")
        ax.set_ylabel("||r||_L2")
        ax.set_title("CGO remainder decay")
        ax.legend()
        return _save(fig, path)


def plot_recon_slices(data, path):
    """Mid-plane slices of the true and reconstructed ``q2 - q1``."""
    g = data["grid"]
    est, tru = np.real(data["estimate"]), np.real(data["truth"])
    mid = g.shape[2] // 2
    vmin, vmax = min(est.min(), tru.min()), max(est.max(), tru.max())
    ext = [g.extents[0][0], g.extents[0][1], g.extents[1][0], g.extents[1][1]]
    with plt.rc_context({**RC, "axes.grid": False}):
        fig, axes = plt.subplots(1, 3, figsize=(9.5, 3.0))
        for ax, img, title in zip(axes, (tru, est, est - tru), ("truth", "partial-data estimate", "error")):
            im = ax.imshow(img[:, :, mid].T, origin="lower", extent=ext, vmin=None if title == "error" else vmin,
                           vmax=None if title == "error" else vmax, cmap="viridis")
            ax.set_title(f"{title} (z = {g.axes[2][mid]:.2f})")
            fig.colorbar(im, ax=ax, shrink=0.8)
        return _save(fig, path)


FIGURES = {"carleman_ratio": plot_carleman_ratio, "cgo_decay": plot_cgo_decay, "recon_slices": plot_recon_slices}


def render(name, data, path):
    return FIGURES[name](data, path)
