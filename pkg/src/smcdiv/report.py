"""Static figure rendering for sweep results.

Renders the sweep's bound estimates to PNG files next to the delimited
output: one panel of ELBO estimates and one of KL-divergence upper
bounds, against rejuvenation count with one series per particle count.
Figures are written to disk only; nothing interactive.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

plt.rcParams["figure.figsize"] = (6.0, 4.0)
plt.rcParams["figure.dpi"] = 150
plt.rcParams["savefig.bbox"] = "tight"
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def _series(rows):
    by_n = {}
    for row in rows:
        by_n.setdefault(row.n_particles, []).append(row)
    for n, group in sorted(by_n.items()):
        group.sort(key=lambda r: r.rejuvenation)
        yield n, group


def _render(rows, field, err_of, ylabel, title, path: Path) -> Path:
    fig, ax = plt.subplots()
    for n, group in _series(rows):
        xs = [r.rejuvenation for r in group]
        ys = [getattr(r, field) for r in group]
        errs = [3.0 * err_of(r) for r in group]
        ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=f"N={n}")
    ax.set_xlabel("rejuvenation applications per step")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(title="particles")
    fig.savefig(path)
    plt.close(fig)
    return path


def render_sweep_figures(rows, out_dir: str | Path) -> list[Path]:
    """Write elbo.png and kl_bound.png for a sweep's result rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = rows[0].model if rows else "sweep"
    written = [
        _render(
            rows,
            "elbo",
            lambda r: r.elbo_stderr,
            "ELBO",
            f"{model}: evidence lower bounds",
            out / "elbo.png",
        ),
        _render(
            rows,
            "kl_bound",
            lambda r: r.kl_stderr,
            "symmetric KL upper bound",
            f"{model}: divergence bounds",
            out / "kl_bound.png",
        ),
    ]
    return written
