"""Static SVG figures for power curves and expected-F profiles."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed salt and no date stamp keep the SVG bytes reproducible
_RC = {"svg.hashsalt": "ascapower", "svg.fonttype": "path"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "ascapower"})
    plt.close(fig)


def power_curve_svg(curve, path, xlabel=None, title=None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4.2))
        power = curve.power
        for j, label in enumerate(curve.labels):
            line, = ax.plot(curve.grid, power[:, j], marker="o", ms=3, label=label)
            ax.fill_between(curve.grid, curve.ci_lo[:, j], curve.ci_hi[:, j],
                            color=line.get_color(), alpha=0.2, lw=0)
        ax.axhline(curve.alpha, color="grey", ls=":", lw=1)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel(xlabel or ("effect size θ" if curve.mode == "rpc" else "sampling size η"))
        ax.set_ylabel("power")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        _save(fig, path)


def expected_f_svg(thetas, profiles, path):
    """``profiles`` maps a label to expected F over ``thetas``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4.2))
        for label, values in profiles.items():
            ax.plot(thetas, values, label=label)
        ax.set_xlabel("effect size θ")
        ax.set_ylabel("expected F-ratio")
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        _save(fig, path)
