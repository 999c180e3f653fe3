"""SVG figures: success curves, plan overlays, energy heatmaps."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..core import trajectory_from_dict  # noqa: E402
from ..ebm import energy_batch  # noqa: E402
from .report import read_report  # noqa: E402

plt.rcParams["svg.hashsalt"] = "ebmprior"  # stable element ids


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def success_curves(rows: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    methods = []
    for r in rows:
        if r["method"] not in methods:
            methods.append(r["method"])
    budgets_all = sorted({int(r["budget"]) for r in rows if r["budget"] != ""})
    for m in methods:
        sel = [r for r in rows if r["method"] == m]
        if all(r["budget"] == "" for r in sel):
            ax.axhline(float(sel[0]["success_rate"]), ls="--", lw=1, label=m, color="gray")
            continue
        pts = sorted((int(r["budget"]), float(r["success_rate"])) for r in sel if r["budget"] != "")
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=m)
    ax.set_xlabel("optimization iterations")
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.02)
    if budgets_all:
        ax.set_xticks(budgets_all)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))


def _draw_world(ax, env: dict, bounds=((-10, -10), (10, 10))):
    for c, r in zip(env["centers"], env["radii"]):
        ax.add_patch(plt.Circle(c, r, color="tab:red", alpha=0.6))
    ax.set_xlim(bounds[0][0], bounds[1][0])
    ax.set_ylim(bounds[0][1], bounds[1][1])
    ax.set_aspect("equal")


def plan_overlay(plan_file, path) -> Path:
    body = json.loads(Path(plan_file).read_text())
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    _draw_world(ax, body["environment"])
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k, (method, plans) in enumerate(sorted(body["plans"].items())):
        for j, (_, t) in enumerate(sorted(plans.items(), key=lambda kv: [int(x) for x in kv[0].split(".")])):
            q = np.asarray(trajectory_from_dict(t).q)
            ax.plot(q[:, 0], q[:, 1], color=colors[k % len(colors)], lw=0.8, label=method if j == 0 else None)
    g = np.asarray(body["goals"])
    ax.scatter(g[:, 0], g[:, 1], marker="x", color="k", s=12)
    ax.legend(frameon=False, fontsize=7, loc="lower right")
    fig.tight_layout()
    return _save(fig, Path(path))


def energy_heatmap(model, env: dict, path, resolution: int = 128, plans=None,
                   bounds=((-10, -10), (10, 10))) -> Path:
    xs = np.linspace(bounds[0][0], bounds[1][0], resolution)
    ys = np.linspace(bounds[0][1], bounds[1][1], resolution)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    ctx = np.asarray(env["centers"], dtype=np.float64).reshape(-1)
    E = energy_batch(model, pts, ctx).reshape(resolution, resolution)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(E, origin="lower", extent=(xs[0], xs[-1], ys[0], ys[-1]), cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.8, label="energy")
    for c, r in zip(env["centers"], env["radii"]):
        ax.add_patch(plt.Circle(c, r, fill=False, color="w", lw=1))
    for q in plans or []:
        q = np.asarray(q)
        ax.plot(q[:, 0], q[:, 1], color="tab:orange", lw=0.8)
    ax.set_aspect("equal")
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_report(report_dir, out_dir, model=None, resolution: int = 128) -> list[Path]:
    """All figures for a report directory; raises on a missing or empty report."""
    report_dir = Path(report_dir)
    rfile = report_dir / "report.csv"
    if not rfile.exists():
        raise FileNotFoundError(f"no report at {rfile}")
    rows = read_report(rfile)
    if not rows:
        raise ValueError("empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    made = [success_curves(rows, out / "success.svg")]
    plan_files = sorted((report_dir / "plans").glob("env_*.json")) if (report_dir / "plans").exists() else []
    for pf in plan_files:
        made.append(plan_overlay(pf, out / f"plans_{pf.stem}.svg"))
    if model is not None and plan_files:
        body = json.loads(plan_files[0].read_text())
        plans = []
        for p in body["plans"].get("ebm_expert", {}).values():
            plans.append(trajectory_from_dict(p).q)
        made.append(energy_heatmap(model, body["environment"], out / f"energy_{plan_files[0].stem}.svg",
                                   resolution, plans))
    return made
