"""Figures written next to the CSV reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_sweep(report, path) -> Path:
    """Two panels: R(eps) on log-log axes, and V_eps against V0 + eps V1."""
    path = Path(path)
    eps = [row.eps for row in report.rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ratios = [max(row.expansion_R, 1e-300) for row in report.rows]
    ax1.loglog(eps, ratios, "o-", label="R(eps)")
    ax1.loglog(eps, [ratios[0] * e / eps[0] for e in eps], ":", color="grey", label="slope 1")
    ax1.set_xlabel("eps")
    ax1.set_ylabel("|V_eps - V0 - eps V1| / eps")
    ax1.legend()
    ax2.plot(eps, [row.v_eps for row in report.rows], "o-", label="V_eps")
    ax2.plot(eps, [row.v0 + row.eps * row.v1 for row in report.rows], "s--", label="V0 + eps V1")
    ax2.axhline(report.rows[0].v0, color="grey", lw=0.8, label="V0")
    ax2.set_xlabel("eps")
    ax2.set_ylabel("price at (0, x0, y0)")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
