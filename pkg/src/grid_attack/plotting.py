"""Figure rendering for attack, estimate and Monte Carlo reports.

Optional: only the CLI's ``--plots`` flag calls into this module, and the
CSV/JSON outputs never depend on it.
"""

from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}

COLORS = {"before": "#4c72b0", "after": "#dd8452", "locked": "#8c8c8c", "hit": "#c44e52"}


def new(width=6.4, height=3.0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path):
    with plt.rc_context(STYLE):
        fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def _index_axis(ax, n):
    ax.set_xlim(0.3, n + 0.7)
    step = 1 if n <= 20 else 5
    ax.set_xticks(np.r_[1, np.arange(step, n + 1, step)] if step > 1 else np.arange(1, n + 1))
    ax.set_xlabel("measurement index")


def _legend(ax):
    ax.legend(frameon=False, loc="upper center", bbox_to_anchor=(0.5, -0.2), ncol=3)


def measurements(fig_data, path):
    z_t, z_a = fig_data["z_t"], fig_data["z_a"]
    idx = np.arange(1, len(z_t) + 1)
    fig, ax = new()
    ax.bar(idx - 0.2, z_t, width=0.4, color=COLORS["before"], label="before attack")
    ax.bar(idx + 0.2, z_a, width=0.4, color=COLORS["after"], label="after attack")
    ax.set_ylabel("p.u.")
    ax.set_title("Measurements before and after the attack")
    _index_axis(ax, len(z_t))
    _legend(ax)
    return save(fig, path)


def attack_vector(fig_data, path):
    a = fig_data["a"]
    locked = np.asarray(fig_data["locked"], dtype=bool)
    idx = np.arange(1, len(a) + 1)
    fig, ax = new()
    ax.bar(idx[~locked], a[~locked], color=COLORS["after"], label="attackable")
    ax.plot(idx[locked], np.zeros(locked.sum()), "x", color=COLORS["locked"], label="locked")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_ylabel("injected bias (p.u.)")
    ax.set_title("Attack vector")
    _index_axis(ax, len(a))
    _legend(ax)
    return save(fig, path)


def residues(fig_data, path):
    r, expected = fig_data["residue"], fig_data["expected"]
    incident = list(fig_data.get("incident", ()))
    idx = np.arange(1, len(r) + 1)
    fig, ax = new()
    colors = [COLORS["hit"] if i in incident else COLORS["before"] for i in range(len(r))]
    ax.bar(idx, r, color=colors, label="post-attack residue")
    ax.plot(idx, expected, "_", ms=8, color="k", label="topology-error signature")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_ylabel("residue (p.u.)")
    ax.set_title("Measurement residue after the attack")
    _index_axis(ax, len(r))
    _legend(ax)
    return save(fig, path)


def states(fig_data, path):
    buses = list(fig_data["buses"])
    x = np.arange(len(buses))
    fig, ax = new()
    ax.plot(x, fig_data["theoretical_deg"], "o-", color=COLORS["before"], label="theoretical")
    ax.plot(x, fig_data["post_deg"], "s--", mfc="none", color=COLORS["after"], label="after attack")
    ax.set_xticks(x, [str(b) for b in buses])
    ax.set_xlabel("bus")
    ax.set_ylabel("angle (deg)")
    ax.set_title("Theoretical state and state after the attack")
    ax.legend(frameon=False)
    return save(fig, path)


def state_gap(fig_data, path):
    buses = list(fig_data["buses"])
    x = np.arange(len(buses))
    fig, ax = new()
    ax.bar(x, fig_data["gap_deg"], color=COLORS["before"])
    ax.set_xticks(x, [str(b) for b in buses])
    ax.set_xlabel("bus")
    ax.set_ylabel("|difference| (deg)")
    ax.set_title("Difference of state value at each bus")
    return save(fig, path)


def montecarlo(fig_data, path):
    mean, expected, tol = fig_data["mean"], fig_data["expected"], fig_data["tolerance"]
    idx = np.arange(1, len(mean) + 1)
    fig, ax = new()
    ax.fill_between(idx, expected - tol, expected + tol, step="mid", color="0.85", label="4 sigma band")
    ax.plot(idx, expected, "k_", ms=8, label="expected")
    ax.plot(idx, mean, ".", color=COLORS["hit"], label="sample mean")
    ax.set_ylabel("residue (p.u.)")
    _index_axis(ax, len(mean))
    _legend(ax)
    return save(fig, path)


def estimate_residues(fig_data, path):
    rn = np.nan_to_num(fig_data["normalized"], nan=0.0)
    idx = np.arange(1, len(rn) + 1)
    fig, ax = new()
    ax.bar(idx, rn, color=COLORS["before"])
    ax.set_ylabel("normalized residue")
    _index_axis(ax, len(rn))
    return save(fig, path)


def render(fig_data, out_dir):
    """Write every figure a report supports; returns the created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = fig_data.get("kind")
    if kind == "attack":
        return [
            measurements(fig_data, out / "measurements.png"),
            attack_vector(fig_data, out / "attack_vector.png"),
            residues(fig_data, out / "residues.png"),
            states(fig_data, out / "states.png"),
            state_gap(fig_data, out / "state_gap.png"),
        ]
    if kind == "montecarlo":
        return [montecarlo(fig_data, out / "montecarlo.png")]
    if kind == "estimate":
        return [estimate_residues(fig_data, out / "normalized_residues.png")]
    return []
