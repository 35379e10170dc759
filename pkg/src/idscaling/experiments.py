"""Config-driven experiment pipeline: teachers, student sweeps, ID, fits.

An experiment is described by one JSON config file (schema below), runs into
an output directory, and is resumable: every artifact is checksummed in a
manifest, and re-running an identical config skips completed work while
recomputing anything missing or corrupted, byte-identically.

Config schema (schema_version 1)::

    {
      "schema_version": 1,
      "kind": "ts_sweep",        # synthetic_id | ts_sweep | product_manifold
                                 # | pnorm_sweep | vetting
      "seed": 1234,              # master seed; all unit seeds derive from it
      "output_dir": "runs/demo", # optional, may be overridden at run time
      "workers": null,           # parallel workers (default: all cores; the
                                 # IDSCALING_WORKERS env var overrides)
      "teacher": {               # ts_sweep / pnorm_sweep / product_manifold
        "shape": [20, 48, 48, 2],
        "feature_counts": [2, 3, 5],   # one sweep per entry (ts_sweep)
        "seed": null,                  # explicit teacher seed (else derived)
        "vet": null,                   # or {"candidates": N, "trials": T}
        "parts": [                     # product_manifold only
          {"feature_count": 2, "slice": [0, 2], "seed": null}, ...],
        "part_widths": [48],           # sizes used to measure per-part ID
        "part_trials": 2
      },
      "students": {
        "input_dim": 20, "output_dim": 2,
        "widths": [4, 6, 8, 12, 16, 24, 32, 48],
        "depths": [2]                  # hidden layers per student
      },
      "training": {
        "segments": [[25000, 200, 0.01], [10000, 200, 0.001], [5000, 200, 0.0001]],
        "loss_kind": "cross_entropy_logits",
        "p_values": [1, 2, 4],         # pnorm_sweep only
        "eval_samples": 100000,
        "trace_every": 100             # trace CSV thinning
      },
      "trials": {"count": 3, "keep": 3, "aggregation": "keep_lowest"},
                                 # aggregation: keep_lowest (kept trials all
                                 # become curve points) | mean_excluding_worst
      "id_measurement": {
        "k_values": [2], "vector_count": 12000,
        "mle_k": null,                 # adds an MLE estimate when set
        "sizes": "prefix_top3",        # prefix_top3 | largest | all
        "counts": null                 # subsample profile (ID vs n)
      },
      "fit": {"apply_hull": true, "loss_threshold": 0.006, "n_min": null},
      "synthetic": {                   # synthetic_id only
        "manifolds": [{"family": "hypercube", "dim": 2, "n": 10000}, ...],
        "estimators": [{"method": "knn_cumulative", "k": 2}, ...],
        "counts": null
      },
      "vetting": {"shape": [9, 240, 240, 2], "feature_count": 3,
                  "candidates": 500, "trials": 50}   # vetting only
    }

Cross-entropy sweeps record the KL gap between teacher and student output
distributions as the curve loss L (the cross entropy minus the teacher's
entropy); it is the quantity that decays to zero with capacity, which a
power law requires. MSE and pnorm sweeps record the loss itself.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io
from .id_estimation import estimate_id_knn, estimate_id_mle, id_vs_pointcount
from .manifolds import PointCloud, load_cloud, sample_hypercube, sample_torus, save_cloud
from .nets import Mlp, TrainConfig, TrainingDivergedError, count_params, forward_activations, init_mlp, train
from .powerlaw import LossCurve, fit_power_law, n_max_at_loss_threshold, n_max_empirical
from .rng import derive_seed, make_rng
from .teachers import TeacherSpec, make_teacher, product_teacher, vet_score, vet_teachers

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "load_config",
    "validate_config",
    "config_hash",
    "run_experiment",
    "resume",
]

SCHEMA_VERSION = 1
KINDS = ("synthetic_id", "ts_sweep", "product_manifold", "pnorm_sweep", "vetting")
AGGREGATIONS = ("keep_lowest", "mean_excluding_worst")
ID_SIZE_MODES = ("prefix_top3", "largest", "all")


class ConfigError(ValueError):
    """The experiment config is structurally or semantically invalid."""


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated, normalized experiment description."""

    data: dict

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def hash(self) -> str:
        return config_hash(self.data)


@dataclass
class RunRecord:
    """Everything one experiment run produced, traceable to the config."""

    config_hash: str
    kind: str
    units: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    estimates: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timestamps: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- config handling ---------------------------------------------------------

_DEFAULTS = {
    "workers": None,
    "output_dir": None,
    "trials": {"count": 1, "keep": 1, "aggregation": "keep_lowest"},
    "id_measurement": {
        "k_values": [2],
        "vector_count": 12000,
        "mle_k": None,
        "sizes": "prefix_top3",
        "counts": None,
    },
    "fit": {"apply_hull": True, "loss_threshold": 0.006, "n_min": None},
}


def _merge_defaults(block: dict | None, defaults: dict) -> dict:
    out = dict(defaults)
    out.update(block or {})
    return out


def validate_config(raw: dict) -> ExperimentConfig:
    """Check a raw config dict and fill in defaults.

    Raises ConfigError with every problem found, one per line.
    """
    problems: list[str] = []
    data = dict(raw)

    if data.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"schema_version must be {SCHEMA_VERSION}")
    kind = data.get("kind")
    if kind not in KINDS:
        problems.append(f"kind must be one of {KINDS}, got {kind!r}")
    if not isinstance(data.get("seed"), int):
        problems.append("seed must be an integer")

    for key in ("trials", "id_measurement", "fit"):
        data[key] = _merge_defaults(data.get(key), _DEFAULTS[key])
    data.setdefault("workers", None)
    data.setdefault("output_dir", None)

    trials = data["trials"]
    if not (isinstance(trials.get("count"), int) and trials["count"] >= 1):
        problems.append("trials.count must be a positive integer")
    if not (isinstance(trials.get("keep"), int) and 1 <= trials.get("keep", 0) <= trials.get("count", 0)):
        problems.append("trials.keep must be in 1..trials.count")
    if trials.get("aggregation") not in AGGREGATIONS:
        problems.append(f"trials.aggregation must be one of {AGGREGATIONS}")
    if data["id_measurement"].get("sizes") not in ID_SIZE_MODES:
        problems.append(f"id_measurement.sizes must be one of {ID_SIZE_MODES}")
    if not data["fit"].get("loss_threshold", 0) > 0:
        problems.append("fit.loss_threshold must be positive")

    if kind in ("ts_sweep", "pnorm_sweep", "product_manifold"):
        problems += _validate_training_kind(data, kind)
    elif kind == "synthetic_id":
        problems += _validate_synthetic(data)
    elif kind == "vetting":
        problems += _validate_vetting(data)

    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return ExperimentConfig(data=data)


def _validate_training_kind(data: dict, kind: str) -> list[str]:
    problems = []
    teacher = data.get("teacher")
    if not isinstance(teacher, dict):
        return [f"{kind} requires a teacher block"]
    shape = teacher.get("shape")
    if not (isinstance(shape, list) and len(shape) >= 2 and all(isinstance(s, int) and s >= 1 for s in shape)):
        problems.append("teacher.shape must be a list of positive layer sizes")
    teacher.setdefault("seed", None)
    teacher.setdefault("vet", None)
    if kind == "ts_sweep":
        ks = teacher.get("feature_counts")
        if not (isinstance(ks, list) and ks and all(isinstance(k, int) and k >= 1 for k in ks)):
            problems.append("teacher.feature_counts must be a nonempty list of ints")
        elif shape and max(ks) > shape[0]:
            problems.append("feature_counts exceed teacher input dimension")
    if kind == "pnorm_sweep":
        k = teacher.get("feature_counts")
        if not (isinstance(k, list) and len(k) == 1):
            problems.append("pnorm_sweep uses exactly one teacher.feature_counts entry")
        pv = (data.get("training") or {}).get("p_values")
        if not (isinstance(pv, list) and pv and all(p > 0 for p in pv)):
            problems.append("training.p_values must be a nonempty list of positive numbers")
    if kind == "product_manifold":
        parts = teacher.get("parts")
        if not (isinstance(parts, list) and len(parts) >= 2):
            problems.append("product_manifold needs >= 2 teacher.parts")
        else:
            stops = 0
            for i, part in enumerate(parts):
                sl = part.get("slice")
                if not (isinstance(sl, list) and len(sl) == 2 and sl[0] == stops and sl[1] > sl[0]):
                    problems.append(f"parts[{i}].slice must tile contiguously from 0")
                    break
                if part.get("feature_count") != sl[1] - sl[0]:
                    problems.append(f"parts[{i}].feature_count must equal its slice width")
                stops = sl[1]
                part.setdefault("seed", None)
        teacher.setdefault("part_widths", [max((data.get("students") or {}).get("widths", [8]))])
        teacher.setdefault("part_trials", data["trials"]["count"])

    students = data.get("students")
    if not isinstance(students, dict):
        problems.append(f"{kind} requires a students block")
    else:
        widths = students.get("widths")
        if not (isinstance(widths, list) and widths and all(isinstance(w, int) and w >= 1 for w in widths)):
            problems.append("students.widths must be a nonempty list of positive ints")
        students.setdefault("depths", [2])
        if not all(isinstance(d, int) and d >= 1 for d in students["depths"]):
            problems.append("students.depths must be positive ints")
        if shape:
            students.setdefault("input_dim", shape[0])
            students.setdefault("output_dim", shape[-1])

    training = data.get("training")
    if not isinstance(training, dict):
        problems.append(f"{kind} requires a training block")
    else:
        segs = training.get("segments")
        if not (isinstance(segs, list) and segs):
            problems.append("training.segments must be a nonempty list")
        else:
            for seg in segs:
                if not (isinstance(seg, list) and len(seg) == 3 and seg[0] >= 1 and seg[1] >= 1 and seg[2] > 0):
                    problems.append(f"bad training segment {seg}")
                    break
        if kind == "pnorm_sweep":
            training["loss_kind"] = "pnorm"
        elif training.get("loss_kind") not in ("mse", "cross_entropy_logits"):
            problems.append("training.loss_kind must be mse or cross_entropy_logits")
        training.setdefault("eval_samples", 100_000)
        training.setdefault("trace_every", 100)
    return problems


def _validate_synthetic(data: dict) -> list[str]:
    problems = []
    block = data.get("synthetic")
    if not isinstance(block, dict):
        return ["synthetic_id requires a synthetic block"]
    manifolds = block.get("manifolds")
    if not (isinstance(manifolds, list) and manifolds):
        problems.append("synthetic.manifolds must be a nonempty list")
    else:
        for i, m in enumerate(manifolds):
            if m.get("family") not in ("hypercube", "torus"):
                problems.append(f"manifolds[{i}].family must be hypercube or torus")
            if not (isinstance(m.get("dim"), int) and m["dim"] >= 1):
                problems.append(f"manifolds[{i}].dim must be a positive int")
            if not (isinstance(m.get("n"), int) and m["n"] >= 2):
                problems.append(f"manifolds[{i}].n must be >= 2")
    block.setdefault("counts", None)
    estimators = block.setdefault("estimators", [{"method": "knn_cumulative", "k": 2}])
    for i, e in enumerate(estimators):
        if e.get("method") not in ("knn_cumulative", "mle_biased", "mle_unbiased"):
            problems.append(f"estimators[{i}].method unknown")
        if not (isinstance(e.get("k"), int) and e["k"] >= 2):
            problems.append(f"estimators[{i}].k must be an int >= 2")
    return problems


def _validate_vetting(data: dict) -> list[str]:
    problems = []
    block = data.get("vetting")
    if not isinstance(block, dict):
        return ["vetting requires a vetting block"]
    shape = block.get("shape")
    if not (isinstance(shape, list) and len(shape) >= 2):
        problems.append("vetting.shape must be a layer-size list")
    if not (isinstance(block.get("feature_count"), int) and block["feature_count"] >= 1):
        problems.append("vetting.feature_count must be a positive int")
    block.setdefault("candidates", 500)
    block.setdefault("trials", 50)
    return problems


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        raw = io.read_json(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except ValueError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return validate_config(raw)


def config_hash(data: dict) -> str:
    """Hash of the science-relevant config (location/parallelism excluded)."""
    relevant = {k: v for k, v in data.items() if k not in ("output_dir", "workers")}
    return hashlib.sha256(io.canonical_json(relevant).encode("ascii")).hexdigest()


# -- manifest / resume bookkeeping -------------------------------------------


class _Store:
    """Artifact store with checksum-based freshness checks."""

    def __init__(self, root: Path, cfg_hash: str):
        self.root = Path(root)
        self.cfg_hash = cfg_hash
        manifest_path = self.root / "manifest.json"
        self.known: dict[str, str] = {}
        if manifest_path.exists():
            manifest = io.read_json(manifest_path)
            if manifest.get("config_hash") == cfg_hash:
                self.known = manifest.get("files", {})

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def fresh(self, rel: str) -> bool:
        """True when the artifact exists and matches its recorded checksum."""
        p = self.root / rel
        if not p.exists() or rel not in self.known:
            return False
        return io.sha256_file(p) == self.known[rel]

    def write_manifest(self) -> None:
        files = {}
        for p in sorted(self.root.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                files[p.relative_to(self.root).as_posix()] = io.sha256_file(p)
        io.write_json(
            self.root / "manifest.json",
            {"schema_version": SCHEMA_VERSION, "config_hash": self.cfg_hash, "files": files},
        )


def _workers(config: ExperimentConfig, override: int | None) -> int:
    if override is not None:
        return max(1, int(override))
    env = os.environ.get("IDSCALING_WORKERS")
    if env:
        return max(1, int(env))
    if config.data.get("workers"):
        return max(1, int(config.data["workers"]))
    return os.cpu_count() or 1


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# -- training units -----------------------------------------------------------


def _student_shape(input_dim: int, width: int, depth: int, output_dim: int) -> list[int]:
    return [input_dim] + [width] * depth + [output_dim]


def _unit_relpath(label: str, width: int, depth: int, trial: int) -> str:
    return f"students/{label}/w{width}_d{depth}_t{trial}.json"


def _trace_relpath(label: str, width: int, depth: int, trial: int) -> str:
    return f"students/{label}/w{width}_d{depth}_t{trial}_trace.csv"


def _run_unit(args: dict) -> dict:
    """Train one student (worker-side); returns the unit record."""
    teacher = io.teacher_from_dict(args["teacher"])
    shape = args["shape"]
    student = init_mlp(shape, args["init_seed"])
    cfg = TrainConfig(
        segments=tuple(tuple(s) for s in args["segments"]),
        loss_kind=args["loss_kind"],
        seed=args["train_seed"],
        pnorm_p=args.get("pnorm_p", 2.0),
        eval_samples=args["eval_samples"],
    )
    record = {
        "label": args["label"],
        "width": args["width"],
        "depth": args["depth"],
        "trial": args["trial"],
        "n_params": student.param_count,
        "seed": args["train_seed"],
        "loss_kind": args["loss_kind"],
        "pnorm_p": args.get("pnorm_p"),
        "feature_count": args["feature_count"],
    }
    try:
        result = train(student, teacher, cfg, feature_count=args["feature_count"])
    except TrainingDivergedError as exc:
        record.update({"diverged": True, "error": str(exc)})
        return {"record": record, "params": None, "trace": exc.trace}
    record.update(
        {
            "diverged": False,
            "final_loss": result.final_loss,
            "final_loss_stderr": result.final_loss_stderr,
            "final_kl": result.final_kl,
            "final_kl_stderr": result.final_kl_stderr,
        }
    )
    return {"record": record, "params": result.net.params, "trace": result.trace}


def _curve_metric(rec: dict) -> float | None:
    if rec.get("diverged"):
        return None
    if rec["loss_kind"] == "cross_entropy_logits":
        return rec["final_kl"]
    return rec["final_loss"]


def _execute_units(store: _Store, jobs: list[dict], trace_every: int, n_workers: int) -> list[dict]:
    """Run (or reload) training units; artifacts are the source of truth."""
    pending = []
    for job in jobs:
        rel = _unit_relpath(job["label"], job["width"], job["depth"], job["trial"])
        trel = _trace_relpath(job["label"], job["width"], job["depth"], job["trial"])
        if not (store.fresh(rel) and store.fresh(trel)):
            pending.append(job)
    if pending:
        if n_workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                outcomes = list(pool.map(_run_unit, pending))
        else:
            outcomes = [_run_unit(j) for j in pending]
        for job, out in zip(pending, outcomes):
            rec = out["record"]
            rel = _unit_relpath(rec["label"], rec["width"], rec["depth"], rec["trial"])
            trel = _trace_relpath(rec["label"], rec["width"], rec["depth"], rec["trial"])
            payload = dict(rec)
            if out["params"] is not None:
                payload["layer_sizes"] = list(job["shape"])
                payload["params"] = out["params"].tolist()
            io.write_json(store.path(rel), payload)
            io.write_trace_csv(store.path(trel), out["trace"], every=trace_every)
    records = []
    for job in jobs:
        rel = _unit_relpath(job["label"], job["width"], job["depth"], job["trial"])
        payload = io.read_json(store.path(rel))
        rec = {k: v for k, v in payload.items() if k not in ("params", "layer_sizes")}
        rec["checkpoint_path"] = rel
        records.append(rec)
    return records


def _build_curve(records: list[dict], label: str, keep: int, aggregation: str, loss_kind: str) -> LossCurve | None:
    """Aggregate unit records for one label into a loss curve."""
    groups: dict[tuple[int, int], list[dict]] = {}
    for rec in records:
        if rec["label"] != label or rec.get("diverged"):
            continue
        groups.setdefault((rec["width"], rec["depth"]), []).append(rec)
    n, loss, width, depth, seed = [], [], [], [], []
    for (w, d), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: (_curve_metric(r), r["trial"]))[:keep]
        metrics = [_curve_metric(r) for r in recs]
        if any(m is None or m <= 0 for m in metrics):
            # a non-positive KL gap means the student matched the teacher to
            # round-off; the point carries no scaling information
            recs = [r for r, m in zip(recs, metrics) if m is not None and m > 0]
            metrics = [_curve_metric(r) for r in recs]
            if not recs:
                continue
        if aggregation == "keep_lowest":
            for r, m in zip(recs, metrics):
                n.append(r["n_params"]); loss.append(m)
                width.append(w); depth.append(d); seed.append(r["seed"])
        else:  # mean_excluding_worst
            n.append(recs[0]["n_params"]); loss.append(float(np.mean(metrics)))
            width.append(w); depth.append(d); seed.append(0)
    if not n:
        return None
    return LossCurve(
        n=np.array(n), loss=np.array(loss), width=np.array(width),
        depth=np.array(depth), seed=np.array(seed), loss_kind=loss_kind,
    )


# -- ID measurement on trained students ---------------------------------------


def _id_sizes(curve: LossCurve, fit, mode: str) -> list[int]:
    sizes = sorted(set(int(v) for v in curve.n))
    if fit is not None and mode in ("prefix_top3", "largest"):
        in_prefix = [s for s in sizes if s <= fit.fit_range[1]]
        if in_prefix:
            sizes = in_prefix
    if mode == "largest":
        return sizes[-1:]
    if mode == "prefix_top3":
        return sizes[-3:]
    return sizes


def _best_unit(records: list[dict], label: str, n_params: int) -> dict | None:
    cands = [
        r for r in records
        if r["label"] == label and not r.get("diverged") and r["n_params"] == n_params
    ]
    if not cands:
        return None
    return min(cands, key=lambda r: (_curve_metric(r), r["trial"]))


def _measure_unit_id(store: _Store, config: ExperimentConfig, rec: dict, master_seed: int) -> list[dict]:
    """Dump prefinal activations of a trained student and estimate its ID."""
    idm = config.data["id_measurement"]
    label, w, d = rec["label"], rec["width"], rec["depth"]
    act_rel = f"activations/{label}/w{w}_d{d}.csv"
    if not store.fresh(act_rel):
        payload = io.read_json(store.path(rec["checkpoint_path"]))
        net = Mlp(payload["layer_sizes"], np.asarray(payload["params"]))
        rng = make_rng(derive_seed(master_seed, "id_inputs", label))
        x = np.zeros((idm["vector_count"], net.input_dim))
        k = rec["feature_count"]
        x[:, :k] = rng.random((idm["vector_count"], k)) - 0.5
        _, hidden = forward_activations(net, x)
        io.write_activations_csv(store.path(act_rel), hidden[-1])
    cloud = load_cloud(store.path(act_rel))
    out = []
    jobs = [("knn_cumulative", kk) for kk in idm["k_values"]]
    if idm.get("mle_k"):
        jobs.append(("mle_unbiased", idm["mle_k"]))
    for method, kk in jobs:
        est_rel = f"estimates/{label}/w{w}_d{d}_{method}_k{kk}.json"
        per_rel = f"estimates/{label}/w{w}_d{d}_{method}_k{kk}_perpoint.csv"
        if not store.fresh(est_rel):
            try:
                if method == "knn_cumulative":
                    est = estimate_id_knn(cloud, kk)
                else:
                    est = estimate_id_mle(cloud, kk, unbiased=True)
                    io.write_per_point_csv(store.path(per_rel), est)
            except ValueError as exc:
                # degenerate activations (e.g. a dead network); record and go on
                io.write_json(store.path(est_rel), {"method": method, "k": kk, "error": str(exc)})
            else:
                io.write_estimate_json(store.path(est_rel), est)
        entry = io.read_json(store.path(est_rel))
        entry.update({"label": label, "width": w, "depth": d,
                      "n_params": rec["n_params"], "activations_path": act_rel})
        out.append(entry)
    if idm.get("counts"):
        prof_rel = f"estimates/{label}/w{w}_d{d}_profile.csv"
        if not store.fresh(prof_rel):
            try:
                profile = id_vs_pointcount(
                    cloud, idm["k_values"][0], idm["counts"],
                    seed=derive_seed(master_seed, "id_profile", label),
                )
            except ValueError:
                profile = []
            with open(store.path(prof_rel), "w", encoding="ascii") as fh:
                fh.write("n_points,d_hat\n")
                for count, est in profile:
                    fh.write(f"{count},{est.d_hat!r}\n")
    return out


def _label_id(estimates: list[dict], label: str) -> float | None:
    """Scalar ID for a label: mean of its first-k knn estimates."""
    vals = [
        e["d_hat"]
        for e in estimates
        if e["label"] == label and e["method"] == "knn_cumulative" and "d_hat" in e
    ]
    if not vals:
        return None
    return float(np.mean(vals))


# -- experiment kinds ----------------------------------------------------------


def _teacher_for_label(config: ExperimentConfig, store: _Store, label: str, builder) -> TeacherSpec:
    """Create or reload the teacher for one sweep label."""
    rel = f"teachers/{label}.json"
    if store.fresh(rel):
        return io.teacher_from_dict(io.read_json(store.path(rel)))
    spec = builder()
    io.write_json(store.path(rel), io.teacher_to_dict(spec))
    return io.teacher_from_dict(io.read_json(store.path(rel)))  # round-trip = canonical


def _sweep_jobs(config, label, teacher, loss_kind, pnorm_p=None):
    data = config.data
    students = data["students"]
    segs = data["training"]["segments"]
    jobs = []
    for depth in students["depths"]:
        for width in students["widths"]:
            shape = _student_shape(students["input_dim"], width, depth, students["output_dim"])
            for trial in range(data["trials"]["count"]):
                jobs.append(
                    {
                        "label": label,
                        "width": width,
                        "depth": depth,
                        "trial": trial,
                        "shape": shape,
                        "teacher": io.teacher_to_dict(teacher),
                        "segments": segs,
                        "loss_kind": loss_kind,
                        "pnorm_p": pnorm_p,
                        "eval_samples": data["training"]["eval_samples"],
                        "feature_count": teacher.feature_count,
                        "init_seed": derive_seed(data["seed"], "student_init", label, width, depth, trial),
                        "train_seed": derive_seed(data["seed"], "student_train", label, width, depth, trial),
                    }
                )
    return jobs


def _fit_label(store: _Store, config: ExperimentConfig, label: str, curve: LossCurve):
    """Fit one label's (already persisted) curve and persist the fit."""
    fits_rel = f"fits/{label}.json"
    curve = io.read_curve_csv(store.path(f"curves/{label}.csv"))  # canonical round trip
    fit = None
    fit_dict = None
    fcfg = config.data["fit"]
    try:
        fit = fit_power_law(curve, apply_hull=fcfg["apply_hull"], n_min=fcfg["n_min"])
    except ValueError:
        fit = None  # too few usable points at this scale: record no fit
    if fit is not None:
        if not store.fresh(fits_rel):
            d = io.fit_to_dict(fit)
            try:
                nm = n_max_at_loss_threshold(fit, fcfg["loss_threshold"])
                d["n_max_threshold"] = {
                    "loss_threshold": fcfg["loss_threshold"],
                    "n_max": nm.n_max,
                    "extrapolated": nm.extrapolated,
                }
            except ValueError as exc:
                d["n_max_threshold"] = {"error": str(exc)}
            d["n_max_empirical"] = n_max_empirical(curve, fit)
            io.write_json(store.path(fits_rel), d)
        fit_dict = io.read_json(store.path(fits_rel))
    return curve, fit, fit_dict


def _run_training_sweeps(
    config: ExperimentConfig, store: _Store, record: RunRecord, n_workers: int,
    analysis: bool = True,
):
    """Shared driver for ts_sweep, pnorm_sweep and product_manifold."""
    data = config.data
    kind = config.kind
    tcfg = data["teacher"]
    loss_kind = data["training"]["loss_kind"]
    trace_every = data["training"]["trace_every"]

    labels: list[tuple[str, TeacherSpec, str, float | None]] = []
    if kind == "ts_sweep":
        for k in tcfg["feature_counts"]:
            label = f"k{k}"

            def build(k=k, label=label):
                seed = tcfg["seed"] if tcfg["seed"] is not None else derive_seed(data["seed"], "teacher", label)
                if tcfg.get("vet"):
                    return vet_teachers(
                        tcfg["shape"], k, tcfg["vet"]["candidates"], tcfg["vet"]["trials"],
                        seed, workers=n_workers,
                    )
                return make_teacher(tcfg["shape"], k, seed)

            labels.append((label, _teacher_for_label(config, store, label, build), loss_kind, None))
    elif kind == "pnorm_sweep":
        k = tcfg["feature_counts"][0]

        def build_p(k=k):
            seed = tcfg["seed"] if tcfg["seed"] is not None else derive_seed(data["seed"], "teacher", "pnorm")
            return make_teacher(tcfg["shape"], k, seed)

        teacher = _teacher_for_label(config, store, "pnorm_teacher", build_p)
        for p in data["training"]["p_values"]:
            labels.append((f"p{p}", teacher, "pnorm", float(p)))
    else:  # product_manifold
        part_specs = []
        for i, part in enumerate(tcfg["parts"]):
            label = f"part{i}"

            def build_part(i=i, part=part, label=label):
                seed = part["seed"] if part["seed"] is not None else derive_seed(data["seed"], "teacher_part", i)
                return make_teacher(tcfg["shape"], part["feature_count"], seed)

            spec = _teacher_for_label(config, store, label, build_part)
            part_specs.append((spec, tuple(part["slice"])))
            labels.append((label, spec, loss_kind, None))

        def build_product():
            return product_teacher(part_specs)

        labels.append(("product", _teacher_for_label(config, store, "product", build_product), loss_kind, None))

    jobs = []
    for label, teacher, lk, p in labels:
        if kind == "product_manifold" and label.startswith("part"):
            # parts only need ID measurements, not a full size sweep
            for depth in data["students"]["depths"][:1]:
                for width in tcfg["part_widths"]:
                    shape = _student_shape(data["students"]["input_dim"], width, depth, data["students"]["output_dim"])
                    for trial in range(tcfg["part_trials"]):
                        jobs.append({
                            "label": label, "width": width, "depth": depth, "trial": trial,
                            "shape": shape, "teacher": io.teacher_to_dict(teacher),
                            "segments": data["training"]["segments"], "loss_kind": lk,
                            "pnorm_p": None, "eval_samples": data["training"]["eval_samples"],
                            "feature_count": teacher.feature_count,
                            "init_seed": derive_seed(data["seed"], "student_init", label, width, depth, trial),
                            "train_seed": derive_seed(data["seed"], "student_train", label, width, depth, trial),
                        })
        else:
            jobs += _sweep_jobs(config, label, teacher, lk, p)

    record.units = _execute_units(store, jobs, trace_every, n_workers)

    for label, teacher, lk, p in labels:
        part_only = kind == "product_manifold" and label.startswith("part")
        curve = _build_curve(record.units, label, data["trials"]["keep"], data["trials"]["aggregation"], lk)
        if curve is None:
            continue
        fit = fit_dict = None
        if not part_only:
            if not store.fresh(f"curves/{label}.csv"):
                io.write_curve_csv(store.path(f"curves/{label}.csv"), curve)
            record.curves[label] = f"curves/{label}.csv"
            if analysis:
                curve, fit, fit_dict = _fit_label(store, config, label, curve)
                if fit_dict is not None:
                    record.fits[label] = fit_dict
        if not analysis:
            continue
        for size in _id_sizes(curve, fit, data["id_measurement"]["sizes"] if not part_only else "largest"):
            best = _best_unit(record.units, label, size)
            if best is not None:
                record.estimates += _measure_unit_id(store, config, best, data["seed"])

    summary = {}
    for label, teacher, lk, p in labels:
        entry = {
            "feature_count": teacher.feature_count,
            "d_hat": _label_id(record.estimates, label),
            "pnorm_p": p,
        }
        if label in record.fits:
            entry["alpha"] = record.fits[label]["alpha"]
            entry["four_over_alpha"] = 4.0 / record.fits[label]["alpha"]
            entry["n_max_threshold"] = record.fits[label]["n_max_threshold"]
            entry["n_max_empirical"] = record.fits[label]["n_max_empirical"]
        summary[label] = entry
    record.summary = summary


def _run_synthetic(config: ExperimentConfig, store: _Store, record: RunRecord):
    block = config.data["synthetic"]
    master = config.seed
    for m in block["manifolds"]:
        family, dim, n = m["family"], m["dim"], m["n"]
        tag = f"{family}_d{dim}"
        cloud_rel = f"clouds/{tag}.csv"
        if not store.fresh(cloud_rel):
            sampler = sample_hypercube if family == "hypercube" else sample_torus
            cloud = sampler(dim, n, seed=derive_seed(master, "cloud", family, dim))
            save_cloud(cloud, store.path(cloud_rel))
        cloud = load_cloud(store.path(cloud_rel))
        record.units.append({"label": tag, "family": family, "dim": dim, "n": n, "cloud_path": cloud_rel})
        for est_cfg in block["estimators"]:
            method, kk = est_cfg["method"], est_cfg["k"]
            est_rel = f"estimates/{tag}_{method}_k{kk}.json"
            per_rel = f"estimates/{tag}_{method}_k{kk}_perpoint.csv"
            if not store.fresh(est_rel):
                if method == "knn_cumulative":
                    est = estimate_id_knn(cloud, kk)
                else:
                    est = estimate_id_mle(cloud, kk, unbiased=(method == "mle_unbiased"))
                    io.write_per_point_csv(store.path(per_rel), est)
                io.write_estimate_json(store.path(est_rel), est)
            entry = io.read_json(store.path(est_rel))
            entry.update({"label": tag, "family": family, "dim": dim})
            record.estimates.append(entry)
            if block.get("counts"):
                prof_rel = f"estimates/{tag}_{method}_k{kk}_profile.csv"
                if not store.fresh(prof_rel):
                    profile = id_vs_pointcount(
                        cloud, kk, block["counts"],
                        seed=derive_seed(master, "profile", tag),
                        method=method,
                    )
                    with open(store.path(prof_rel), "w", encoding="ascii") as fh:
                        fh.write("n_points,d_hat\n")
                        for count, est in profile:
                            fh.write(f"{count},{est.d_hat!r}\n")
    record.summary = {
        e["label"] + "_" + e["method"] + f"_k{e['k']}": {"dim": e["dim"], "d_hat": e["d_hat"]}
        for e in record.estimates
    }


def _run_vetting(config: ExperimentConfig, store: _Store, record: RunRecord, n_workers: int):
    block = config.data["vetting"]
    rel = "teachers/vetted.json"
    if not store.fresh(rel):
        best = vet_teachers(
            block["shape"], block["feature_count"], block["candidates"], block["trials"],
            seed=config.seed, workers=n_workers,
        )
        io.write_json(store.path(rel), io.teacher_to_dict(best))
    payload = io.read_json(store.path(rel))
    record.summary = {
        "vetted_teacher": rel,
        "vetting_score": payload["vetting_score"],
        "seed": payload["seed"],
        "candidates": block["candidates"],
        "trials": block["trials"],
    }


# -- entry points ---------------------------------------------------------------


def run_experiment(
    config: ExperimentConfig,
    output_dir=None,
    workers: int | None = None,
    analysis: bool = True,
) -> RunRecord:
    """Execute an experiment into its output directory.

    Completed units (matching the manifest's checksums under the same config
    hash) are skipped, so re-running an identical config resumes. A differing
    config in the same directory is refused with a summary of what changed.
    ``analysis=False`` stops after the student sweep and loss curves (the
    CLI's ``sweep`` subcommand), leaving fits and ID measurement for later.
    """
    out = Path(output_dir or config.data.get("output_dir") or ".")
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = config.hash()
    cfg_path = out / "config.json"
    if cfg_path.exists():
        existing = io.read_json(cfg_path)
        if config_hash(existing) != cfg_hash:
            raise ConfigError(
                "output directory holds a different config:\n" + _config_diff(existing, config.data)
            )
    else:
        io.write_json(cfg_path, config.data)

    started = _now()
    store = _Store(out, cfg_hash)
    record = RunRecord(config_hash=cfg_hash, kind=config.kind)
    n_workers = _workers(config, workers)
    try:
        if config.kind in ("ts_sweep", "pnorm_sweep", "product_manifold"):
            _run_training_sweeps(config, store, record, n_workers, analysis=analysis)
        elif config.kind == "synthetic_id":
            _run_synthetic(config, store, record)
        else:
            _run_vetting(config, store, record, n_workers)
    except OSError:
        record.timestamps = {"started": started, "finished": _now(), "aborted": True}
        io.write_json(out / "run_record.json", record.to_dict())
        store.write_manifest()
        raise
    record.timestamps = {"started": started, "finished": _now()}
    io.write_json(out / "run_record.json", record.to_dict())
    store.write_manifest()
    return record


def resume(run_dir) -> RunRecord:
    """Resume a run directory: skip complete units, recompute missing pieces."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    cfg_path = run_dir / "config.json"
    if not manifest_path.exists() or not cfg_path.exists():
        raise ConfigError(f"{run_dir} has no manifest/config to resume from")
    config = validate_config(io.read_json(cfg_path))
    manifest = io.read_json(manifest_path)
    if manifest.get("config_hash") != config.hash():
        raise ConfigError(
            "manifest config hash does not match config.json; refusing to resume\n"
            f"  manifest: {manifest.get('config_hash')}\n  config:   {config.hash()}"
        )
    return run_experiment(config, output_dir=run_dir)


def _config_diff(a: dict, b: dict) -> str:
    lines = []

    def walk(pa, pb, prefix):
        keys = sorted(set(pa) | set(pb))
        for key in keys:
            if key in ("output_dir", "workers"):
                continue
            va, vb = pa.get(key), pb.get(key)
            if isinstance(va, dict) and isinstance(vb, dict):
                walk(va, vb, prefix + key + ".")
            elif va != vb:
                lines.append(f"  {prefix}{key}: {va!r} != {vb!r}")

    walk(a, b, "")
    return "\n".join(lines) or "  (hashes differ)"
