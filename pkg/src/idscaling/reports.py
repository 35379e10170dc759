"""Plot-ready CSVs and static figures from a completed run directory.

Each figure family is keyed by a short name and draws on the artifacts a run
left behind; asking for a figure whose inputs are missing raises an error
that lists exactly which record kinds are absent.

    fig2   size at the loss threshold vs measured dimension
    fig4   loss curves with power-law fit overlays
    fig5   product-manifold summary (per-part and total dimensions vs 4/alpha)
    fig6   fitted exponent alpha vs the loss power p
    fig7   4/alpha against measured dimension and against feature count
    fig10  empirical end-of-power-law size vs measured dimension
    fig12  estimated dimension vs point count on synthetic manifolds
    fig13  histogram of per-point MLE dimension values
    fig14  estimated dimension vs activation-vector count
    fig16  estimated dimension across student sizes
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import io
from .experiments import _Store, config_hash
from .powerlaw import alpha_vs_dimension_report

__all__ = ["FIGURES", "ReportError", "report"]

FIGURES = ("fig2", "fig4", "fig5", "fig6", "fig7", "fig10", "fig12", "fig13", "fig14", "fig16")


class ReportError(ValueError):
    """Required run artifacts for the requested figure are missing."""


def _load_record(run_dir: Path) -> dict:
    missing = [name for name in ("run_record.json", "config.json") if not (run_dir / name).exists()]
    if missing:
        raise ReportError(f"{run_dir} is not a completed run; missing: {', '.join(missing)}")
    return io.read_json(run_dir / "run_record.json")


def report(run_dir, figure: str) -> list[Path]:
    """Write reports/<figure>.csv (+ .png) for one figure family."""
    run_dir = Path(run_dir)
    if figure not in FIGURES:
        raise ReportError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    record = _load_record(run_dir)
    out_dir = run_dir / "reports"
    out_dir.mkdir(exist_ok=True)
    paths = _BUILDERS[figure](run_dir, record, out_dir)
    cfg = io.read_json(run_dir / "config.json")
    _Store(run_dir, config_hash(cfg)).write_manifest()
    return paths


def _summary_rows(record, need_fit=True, need_id=True):
    rows = []
    for label, entry in sorted(record.get("summary", {}).items()):
        if need_fit and "alpha" not in entry:
            continue
        if need_id and entry.get("d_hat") is None:
            continue
        rows.append((label, entry))
    return rows


def _fig2_like(run_dir, record, out_dir, name, value_key):
    rows = _summary_rows(record)
    missing = []
    if record.get("kind") not in ("ts_sweep", "pnorm_sweep", "product_manifold"):
        missing.append("a training-sweep run record")
    if not rows:
        missing.append("fits with ID estimates (summary entries)")
    if missing:
        raise ReportError(f"{name} needs: " + "; ".join(missing))
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("label,feature_count,d_hat,n_max,extrapolated\n")
        for label, entry in rows:
            if value_key == "empirical":
                n_max, extr = entry["n_max_empirical"], False
            else:
                nm = entry["n_max_threshold"]
                if "n_max" not in nm:
                    continue
                n_max, extr = nm["n_max"], nm["extrapolated"]
            fh.write(f"{label},{entry['feature_count']},{entry['d_hat']!r},{n_max!r},{int(extr)}\n")
    fig, ax = plt.subplots(figsize=(5, 4))
    ds = [e["d_hat"] for _, e in rows]
    ns = [
        e["n_max_empirical"] if value_key == "empirical" else e["n_max_threshold"].get("n_max", np.nan)
        for _, e in rows
    ]
    ax.semilogy(ds, ns, "o-")
    ax.set_xlabel("measured intrinsic dimension")
    ax.set_ylabel("N_max (threshold)" if value_key == "threshold" else "N_max (end of fit range)")
    fig.tight_layout()
    png_path = out_dir / f"{name}.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _fig2(run_dir, record, out_dir):
    return _fig2_like(run_dir, record, out_dir, "fig2", "threshold")


def _fig10(run_dir, record, out_dir):
    return _fig2_like(run_dir, record, out_dir, "fig10", "empirical")


def _fig4(run_dir, record, out_dir):
    curves = record.get("curves", {})
    fits = record.get("fits", {})
    if not curves:
        raise ReportError("fig4 needs: loss-curve CSVs (curves/)")
    csv_path = out_dir / "fig4.csv"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("label,N,L,L_fit\n")
        for label, rel in sorted(curves.items()):
            curve = io.read_curve_csv(run_dir / rel)
            fit = fits.get(label)
            order = np.argsort(curve.n)
            pred = (
                fit["c"] * curve.n.astype(float) ** (-fit["alpha"]) if fit else [float("nan")] * len(curve)
            )
            for i in order:
                fh.write(f"{label},{int(curve.n[i])},{float(curve.loss[i])!r},{float(pred[i])!r}\n")
            ax.loglog(curve.n[order], curve.loss[order], "o", label=label, ms=4)
            if fit is not None:
                ax.loglog(curve.n[order], np.asarray(pred)[order], "-", color=ax.lines[-1].get_color())
    ax.set_xlabel("parameters N")
    ax.set_ylabel(f"loss ({curve.loss_kind or 'L'})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png_path = out_dir / "fig4.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _fig5(run_dir, record, out_dir):
    if record.get("kind") != "product_manifold":
        raise ReportError("fig5 needs: a product_manifold run record")
    summary = record.get("summary", {})
    parts = sorted(l for l in summary if l.startswith("part"))
    if not parts or "product" not in summary:
        raise ReportError("fig5 needs: part and product summary entries with IDs")
    part_ds = [summary[p]["d_hat"] for p in parts]
    if any(d is None for d in part_ds) or summary["product"].get("d_hat") is None:
        raise ReportError("fig5 needs: ID estimates for every part and the product")
    total = summary["product"]["d_hat"]
    alpha = summary["product"].get("alpha")
    if alpha is None:
        raise ReportError("fig5 needs: a power-law fit for the product sweep")
    csv_path = out_dir / "fig5.csv"
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("quantity,value\n")
        for p, d in zip(parts, part_ds):
            fh.write(f"d_{p},{d!r}\n")
        fh.write(f"d_total,{total!r}\n")
        fh.write(f"sum_part_d,{sum(part_ds)!r}\n")
        fh.write(f"max_part_d,{max(part_ds)!r}\n")
        fh.write(f"alpha,{alpha!r}\n")
        fh.write(f"four_over_alpha,{4.0 / alpha!r}\n")
    fig, ax = plt.subplots(figsize=(5, 4))
    names = [f"d({p})" for p in parts] + ["sum d_i", "measured d", "4/alpha"]
    values = part_ds + [sum(part_ds), total, 4.0 / alpha]
    ax.bar(names, values)
    ax.set_ylabel("dimension")
    fig.tight_layout()
    png_path = out_dir / "fig5.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _fig6(run_dir, record, out_dir):
    if record.get("kind") != "pnorm_sweep":
        raise ReportError("fig6 needs: a pnorm_sweep run record")
    rows = [
        (e["pnorm_p"], e["alpha"])
        for _, e in sorted(record.get("summary", {}).items())
        if e.get("pnorm_p") is not None and "alpha" in e
    ]
    if len(rows) < 2:
        raise ReportError("fig6 needs: fits for at least 2 loss powers")
    ps = np.array([r[0] for r in rows])
    alphas = np.array([r[1] for r in rows])
    slope, intercept = np.polyfit(ps, alphas, 1)
    csv_path = out_dir / "fig6.csv"
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("p,alpha\n")
        for p, a in rows:
            fh.write(f"{p!r},{a!r}\n")
    io.write_json(out_dir / "fig6_fit.json", {"slope": float(slope), "intercept": float(intercept)})
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ps, alphas, "o")
    grid = np.linspace(0, ps.max() * 1.05, 50)
    ax.plot(grid, slope * grid + intercept, "-", label=f"alpha = {slope:.3f} p + {intercept:.3f}")
    ax.set_xlabel("loss power p")
    ax.set_ylabel("fitted alpha")
    ax.legend()
    fig.tight_layout()
    png_path = out_dir / "fig6.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, out_dir / "fig6_fit.json", png_path]


def _fig7(run_dir, record, out_dir):
    rows = [
        (e["feature_count"], e["d_hat"], e["alpha"])
        for _, e in sorted(record.get("summary", {}).items())
        if e.get("d_hat") is not None and "alpha" in e
    ]
    if len(rows) < 2:
        raise ReportError("fig7 needs: at least 2 labels with both a fit and an ID estimate")
    rep = alpha_vs_dimension_report(rows)
    csv_path = out_dir / "fig7.csv"
    rep.write_csv(csv_path)
    io.write_json(
        out_dir / "fig7_fit.json",
        {
            "slope_vs_id": rep.slope_vs_id,
            "intercept_vs_id": rep.intercept_vs_id,
            "slope_vs_features": rep.slope_vs_features,
            "intercept_vs_features": rep.intercept_vs_features,
        },
    )
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    ks = np.array([r[0] for r in rows])
    ds = np.array([r[1] for r in rows])
    fa = 4.0 / np.array([r[2] for r in rows])
    for ax, xs, slope, icpt, xlabel in (
        (axes[0], ds, rep.slope_vs_id, rep.intercept_vs_id, "measured intrinsic dimension"),
        (axes[1], ks, rep.slope_vs_features, rep.intercept_vs_features, "feature count"),
    ):
        ax.plot(xs, fa, "o")
        grid = np.linspace(xs.min(), xs.max(), 20)
        ax.plot(grid, slope * grid + icpt, "-", label=f"slope {slope:.2f}")
        ax.plot(grid, grid, ":", color="gray", label="y = x")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("4 / alpha")
        ax.legend(fontsize=8)
    fig.tight_layout()
    png_path = out_dir / "fig7.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, out_dir / "fig7_fit.json", png_path]


def _fig12(run_dir, record, out_dir):
    if record.get("kind") != "synthetic_id":
        raise ReportError("fig12 needs: a synthetic_id run record")
    rows = []
    for est in record.get("estimates", []):
        tag = f"{est['label']}_{est['method']}_k{est['k']}"
        prof = run_dir / "estimates" / f"{tag}_profile.csv"
        if prof.exists():
            with open(prof, "r", encoding="ascii") as fh:
                fh.readline()
                for line in fh:
                    n_pts, d_hat = line.strip().split(",")
                    rows.append((est["family"], est["dim"], est["method"], est["k"], int(n_pts), float(d_hat)))
        else:
            rows.append((est["family"], est["dim"], est["method"], est["k"], est["n_used"], est["d_hat"]))
    if not rows:
        raise ReportError("fig12 needs: synthetic estimates (none recorded)")
    csv_path = out_dir / "fig12.csv"
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("family,dim,method,k,n_points,d_hat\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]},{r[5]!r}\n")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for family in sorted({r[0] for r in rows}):
        for dim in sorted({r[1] for r in rows if r[0] == family}):
            pts = sorted((r[4], r[5]) for r in rows if r[0] == family and r[1] == dim)
            ax.semilogx([p[0] for p in pts], [p[1] for p in pts], "o-", label=f"{family} d={dim}")
            ax.axhline(dim, color="gray", lw=0.5, ls=":")
    ax.set_xlabel("points used")
    ax.set_ylabel("estimated dimension")
    ax.legend(fontsize=7)
    fig.tight_layout()
    png_path = out_dir / "fig12.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _fig13(run_dir, record, out_dir):
    per_point = sorted((run_dir / "estimates").rglob("*perpoint.csv")) if (run_dir / "estimates").exists() else []
    if not per_point:
        raise ReportError("fig13 needs: per-point MLE estimate CSVs (run with an MLE estimator)")
    csv_path = out_dir / "fig13.csv"
    fig, ax = plt.subplots(figsize=(6, 4))
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("source,d_point\n")
        for path in per_point:
            values = np.loadtxt(path, skiprows=1)
            name = path.relative_to(run_dir / "estimates").as_posix()
            for v in np.atleast_1d(values).tolist():
                fh.write(f"{name},{v!r}\n")
            ax.hist(np.atleast_1d(values), bins=40, alpha=0.6, label=name)
    ax.set_xlabel("per-point dimension")
    ax.set_ylabel("count")
    ax.legend(fontsize=7)
    fig.tight_layout()
    png_path = out_dir / "fig13.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _fig14(run_dir, record, out_dir):
    profiles = sorted((run_dir / "estimates").rglob("w*_profile.csv")) if (run_dir / "estimates").exists() else []
    if not profiles:
        raise ReportError(
            "fig14 needs: activation ID-vs-count profiles (set id_measurement.counts)"
        )
    csv_path = out_dir / "fig14.csv"
    fig, ax = plt.subplots(figsize=(5.5, 4))
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("source,n_points,d_hat\n")
        for path in profiles:
            name = path.relative_to(run_dir / "estimates").as_posix()
            xs, ys = [], []
            with open(path, "r", encoding="ascii") as pf:
                pf.readline()
                for line in pf:
                    n_pts, d_hat = line.strip().split(",")
                    fh.write(f"{name},{n_pts},{d_hat}\n")
                    xs.append(int(n_pts)); ys.append(float(d_hat))
            ax.semilogx(xs, ys, "o-", label=name)
    ax.set_xlabel("activation vectors used")
    ax.set_ylabel("estimated dimension")
    ax.legend(fontsize=7)
    fig.tight_layout()
    png_path = out_dir / "fig14.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def _fig16(run_dir, record, out_dir):
    rows = [
        (e["label"], e["n_params"], e["d_hat"])
        for e in record.get("estimates", [])
        if e.get("method") == "knn_cumulative" and "n_params" in e and "d_hat" in e
    ]
    if not rows:
        raise ReportError("fig16 needs: ID estimates on trained students")
    csv_path = out_dir / "fig16.csv"
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("label,N,d_hat\n")
        for label, n, d in sorted(rows):
            fh.write(f"{label},{n},{d!r}\n")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label in sorted({r[0] for r in rows}):
        pts = sorted((n, d) for l, n, d in rows if l == label)
        ax.semilogx([p[0] for p in pts], [p[1] for p in pts], "o-", label=label)
    ax.set_xlabel("student parameters N")
    ax.set_ylabel("estimated dimension")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png_path = out_dir / "fig16.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


_BUILDERS = {
    "fig2": _fig2,
    "fig4": _fig4,
    "fig5": _fig5,
    "fig6": _fig6,
    "fig7": _fig7,
    "fig10": _fig10,
    "fig12": _fig12,
    "fig13": _fig13,
    "fig14": _fig14,
    "fig16": _fig16,
}
