"""CSV and figure output for closed-loop runs and their comparison."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .errors import ValidationError  # noqa: E402
from .harness import Comparison, RunLog, electrical_power  # noqa: E402

DECK_LABELS = ("upper", "middle", "lower")
STYLE = {"activated": "tab:blue", "deactivated": "tab:orange"}


def _prepare(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create report directory {out}: {exc}") from exc
    probe = out / ".write_probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"report directory {out} is not writable: {exc}") from exc
    return out


def write_run_tables(logs: dict[str, RunLog], out_dir: str | Path) -> list[Path]:
    out = _prepare(out_dir)
    paths = []
    for mode, log_ in logs.items():
        p = out / f"run_{mode}.csv"
        log_.frame().to_csv(p, index=False, float_format="%.10g")
        paths.append(p)
        if log_.steps:
            s = out / f"steps_{mode}.csv"
            log_.step_frame().to_csv(s, index=False, float_format="%.10g")
            paths.append(s)
    return paths


def write_comparison(cmp: Comparison, out_dir: str | Path) -> list[Path]:
    out = _prepare(out_dir)
    summary = out / "comparison.csv"
    pd.DataFrame([cmp.summary()]).to_csv(summary, index=False, float_format="%.10g")
    buckets = out / "savings_30min.csv"
    cmp.buckets.to_csv(buckets, index=False, float_format="%.10g")
    return [summary, buckets]


def _hours(t: np.ndarray) -> np.ndarray:
    return t / 3600.0


def plot_runs(logs: dict[str, RunLog], cmp: Comparison | None, out_dir: str | Path, t_max: float = 2.0,
              setpoint_band: float = 2.0, title: str = "") -> list[Path]:
    """Temperatures, setpoints, disturbances, cumulative energy and savings bars."""
    out = _prepare(out_dir)
    any_log = next(iter(logs.values()))
    h = _hours(any_log.t)
    rule = any_log.t_rule

    fig, axes = plt.subplots(4, 1, figsize=(10, 12), sharex=True)
    ax = axes[0]
    ax.fill_between(h, rule - t_max, rule + t_max, color="0.9", label="comfort band")
    for mode, log_ in logs.items():
        for i, ls in enumerate(("-", "--", ":")):
            ax.plot(h, log_.t_room[:, i], ls, color=STYLE.get(mode, None), lw=1,
                    label=f"{mode} {DECK_LABELS[i]}")
    ax.set_ylabel("room temperature [°C]")
    ax.legend(fontsize=7, ncol=3)

    ax = axes[1]
    ax.plot(h, rule, "k", lw=1, label="rule-based")
    ax.plot(h, rule - setpoint_band, "k:", lw=0.8)
    ax.plot(h, rule + setpoint_band, "k:", lw=0.8, label="setpoint limits")
    for mode, log_ in logs.items():
        ax.step(h, log_.t_ref, where="post", color=STYLE.get(mode, None), lw=1.2, label=f"{mode} setpoint")
    ax.set_ylabel("setpoint [°C]")
    ax.legend(fontsize=7)

    ax = axes[2]
    d = any_log.disturbances
    ax.plot(h, d[:, 0], color="tab:red", lw=1, label="ambient")
    ax.set_ylabel("ambient [°C]")
    ax2 = ax.twinx()
    ax2.plot(h, d[:, 1], color="gold", lw=1, label="top irradiation")
    ax2.plot(h, d[:, 2], color="tab:olive", lw=1, label="side irradiation")
    ax2.set_ylabel("irradiation [W/m²]")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], fontsize=7)

    ax = axes[3]
    for mode, log_ in logs.items():
        p = electrical_power(log_.q_hvac, log_.q_fw)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(log_.t))]) / 3.6e6
        ax.plot(h, cum, color=STYLE.get(mode, None), label=f"{mode}")
    ax.set_ylabel("cumulative energy [kWh, surrogate]")
    ax.set_xlabel("time [h]")
    ax.legend(fontsize=7)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    paths = [out / "overview.png"]
    fig.savefig(paths[0], dpi=110)
    plt.close(fig)

    if cmp is not None and not cmp.buckets.empty:
        fig, ax = plt.subplots(figsize=(10, 3.5))
        b = cmp.buckets
        mid = _hours(0.5 * (b["start_s"] + b["end_s"]).to_numpy())
        vals = b["savings_pct"].to_numpy()
        ax.bar(mid, vals, width=0.45, color=np.where(vals >= 0, "tab:green", "tab:red"))
        ax.axhline(cmp.savings_pct, color="k", lw=1, ls="--", label=f"overall {cmp.savings_pct:.1f} %")
        ax.set_xlabel("time [h]")
        ax.set_ylabel("savings per 30 min [%]")
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = out / "savings.png"
        fig.savefig(p, dpi=110)
        plt.close(fig)
        paths.append(p)
    return paths


def emit_report(logs: dict[str, RunLog], cmp: Comparison | None, out_dir: str | Path, **plot_kw) -> list[Path]:
    paths = write_run_tables(logs, out_dir)
    if cmp is not None:
        paths += write_comparison(cmp, out_dir)
    paths += plot_runs(logs, cmp, out_dir, **plot_kw)
    return paths
