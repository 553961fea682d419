"""Figures for the CLI's ``--plot`` path.

Every figure is written next to the CSV holding the same numbers, so the CSV
stays the record and the PNG is a convenience.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.frameon": False,
    "lines.linewidth": 1.4,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_solution(sol, path) -> Path:
    """Profiles ``a, b`` and their derivatives against ``t``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(sol.t, sol.a, label="a")
        ax.plot(sol.t, sol.b, label="b")
        ax.plot(sol.t, sol.adot, "--", label="a'")
        ax.plot(sol.t, sol.bdot, "--", label="b'")
        ax.set_xlabel("t")
        ax.set_title(f"Böhm ({sol.p},{sol.q}), alpha={sol.params.alpha}, T={sol.T:.6f}")
        ax.legend(loc="best")
        return _save(fig, path)


def plot_perturbation(t, h, path, title: str = "") -> Path:
    """Coefficient fields ``htt, hsph, fib`` of a diagonal perturbation."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for key in ("htt", "hsph", "fib"):
            y = np.asarray(getattr(h, key), dtype=float)
            ax.plot(t, np.where(np.isfinite(y), y, np.nan), label=key)
        if h.sig is not None:
            ax.plot(t, h.sig, ":", label="sigma coeff")
        ax.set_xlabel("t")
        ax.set_title(title or h.name)
        ax.legend(loc="best")
        return _save(fig, path)


def plot_integrand(t, values, path, title: str = "", ylabel: str = "integrand") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(t, values)
        ax.axhline(0.0, color="k", lw=0.6)
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_limit_table(rows, path) -> Path:
    """Bar chart of ``I(p, q)`` over the admissible range."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        labels = [f"({r['p']},{r['q']})" for r in rows]
        ax.bar(range(len(rows)), [r["I_quadrature"] for r in rows], color="tab:blue")
        ax.set_xticks(range(len(rows)), labels, rotation=60, fontsize=8)
        ax.set_ylabel("I(p, q)")
        return _save(fig, path)
