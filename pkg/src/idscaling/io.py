"""Deterministic serialization: JSON checkpoints, CSV tables, checksums.

Every writer here is byte-deterministic for identical inputs: floats render
with Python's shortest round-trip notation, JSON keys are sorted, and no
file embeds a timestamp. That makes re-runs byte-comparable and lets the
run manifest detect stale or corrupted artifacts by checksum.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .id_estimation import IdEstimate
from .nets import Mlp
from .powerlaw import LossCurve, PowerLawFit
from .teachers import TeacherSpec

__all__ = [
    "canonical_json",
    "write_json",
    "read_json",
    "sha256_file",
    "mlp_to_dict",
    "mlp_from_dict",
    "save_checkpoint",
    "load_checkpoint",
    "teacher_to_dict",
    "teacher_from_dict",
    "write_trace_csv",
    "write_curve_csv",
    "read_curve_csv",
    "fit_to_dict",
    "write_estimate_json",
    "write_per_point_csv",
    "write_activations_csv",
]


def _plain(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    """Sorted-key, round-trip-exact JSON text (trailing newline included)."""
    return json.dumps(_plain(obj), sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(canonical_json(obj))


def read_json(path):
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- networks ---------------------------------------------------------------


def mlp_to_dict(net: Mlp) -> dict:
    return {"layer_sizes": list(net.layer_sizes), "params": net.params.tolist()}


def mlp_from_dict(d: dict) -> Mlp:
    return Mlp(d["layer_sizes"], np.asarray(d["params"], dtype=np.float64))


def save_checkpoint(path, net: Mlp, extra: dict | None = None) -> None:
    """Network checkpoint: shapes + flat parameter vector, full precision."""
    payload = mlp_to_dict(net)
    if extra:
        payload.update(_plain(extra))
    write_json(path, payload)


def load_checkpoint(path) -> tuple[Mlp, dict]:
    d = read_json(path)
    net = mlp_from_dict(d)
    extra = {k: v for k, v in d.items() if k not in ("layer_sizes", "params")}
    return net, extra


# -- teachers ---------------------------------------------------------------


def teacher_to_dict(spec: TeacherSpec) -> dict:
    d = {
        "feature_count": spec.feature_count,
        "seed": spec.seed,
        "vetting_score": spec.vetting_score,
    }
    if spec.net is not None:
        d["net"] = mlp_to_dict(spec.net)
    if spec.components is not None:
        d["components"] = [
            {"slice": [start, stop], "teacher": teacher_to_dict(part)}
            for part, (start, stop) in spec.components
        ]
    return d


def teacher_from_dict(d: dict) -> TeacherSpec:
    components = None
    if d.get("components"):
        components = tuple(
            (teacher_from_dict(c["teacher"]), (c["slice"][0], c["slice"][1]))
            for c in d["components"]
        )
    return TeacherSpec(
        feature_count=d["feature_count"],
        net=mlp_from_dict(d["net"]) if "net" in d else None,
        seed=d.get("seed"),
        vetting_score=d.get("vetting_score"),
        components=components,
    )


# -- tables -----------------------------------------------------------------


def write_trace_csv(path, trace: np.ndarray, every: int = 1) -> None:
    """Loss trace as CSV (step, loss, lr, batch_size), optionally thinned.

    With ``every`` > 1 only each ``every``-th step is written, plus the final
    step so the end of training is always recorded.
    """
    idx = np.arange(0, trace.shape[0], max(1, int(every)))
    if trace.shape[0] and idx[-1] != trace.shape[0] - 1:
        idx = np.append(idx, trace.shape[0] - 1)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("step,loss,lr,batch_size\n")
        for row in trace[idx]:
            fh.write(
                f"{int(row['step'])},{float(row['loss'])!r},{float(row['lr'])!r},{int(row['batch_size'])}\n"
            )


def write_curve_csv(path, curve: LossCurve) -> None:
    """Loss curve as CSV (N, L, width, depth, seed, loss_kind)."""
    width = curve.width if curve.width is not None else np.zeros(len(curve), np.int64)
    depth = curve.depth if curve.depth is not None else np.zeros(len(curve), np.int64)
    seed = curve.seed if curve.seed is not None else np.zeros(len(curve), np.int64)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("N,L,width,depth,seed,loss_kind\n")
        for i in range(len(curve)):
            fh.write(
                f"{int(curve.n[i])},{float(curve.loss[i])!r},{int(width[i])},"
                f"{int(depth[i])},{int(seed[i])},{curve.loss_kind}\n"
            )


def read_curve_csv(path) -> LossCurve:
    n, loss, width, depth, seed = [], [], [], [], []
    loss_kind = ""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["N", "L"]:
            raise ValueError(f"{path}: expected loss-curve CSV header, got {header}")
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            n.append(int(parts[0]))
            loss.append(float(parts[1]))
            width.append(int(parts[2]) if len(parts) > 2 else 0)
            depth.append(int(parts[3]) if len(parts) > 3 else 0)
            seed.append(int(parts[4]) if len(parts) > 4 else 0)
            if len(parts) > 5:
                loss_kind = parts[5]
    return LossCurve(
        n=np.array(n), loss=np.array(loss), width=np.array(width),
        depth=np.array(depth), seed=np.array(seed), loss_kind=loss_kind,
    )


def fit_to_dict(fit: PowerLawFit) -> dict:
    return {
        "alpha": fit.alpha,
        "c": fit.c,
        "n_points_used": fit.n_points_used,
        "max_radius": fit.max_radius,
        "fit_range": list(fit.fit_range),
        "residuals": fit.residuals.tolist(),
        "loss_kind": fit.loss_kind,
    }


def write_estimate_json(path, est: IdEstimate) -> None:
    write_json(path, est.record())


def write_per_point_csv(path, est: IdEstimate) -> None:
    """Per-point MLE values, one per row, for dimension histograms."""
    if est.per_point is None:
        raise ValueError("estimate has no per-point values")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("d_point\n")
        for v in est.per_point.tolist():
            fh.write(f"{v!r}\n")


def write_activations_csv(path, activations: np.ndarray) -> None:
    """Activation matrix as headerless CSV, full round-trip precision."""
    with open(path, "w", encoding="ascii") as fh:
        for row in activations:
            fh.write(",".join(repr(v) for v in row.tolist()))
            fh.write("\n")
