"""Teacher networks: random target functions of a controlled feature count.

A teacher is a randomly initialized ReLU network evaluated with all input
coordinates beyond its feature count forced to zero, so the target function
depends on exactly k input features. Teachers can be vetted (selecting the
least axis-linear candidate among many) and composed additively over
disjoint input slices to build product-structured targets.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .nets import Mlp, forward, init_mlp
from .rng import derive_seed, make_rng

__all__ = [
    "TeacherSpec",
    "make_teacher",
    "teacher_output",
    "vet_score",
    "vet_teachers",
    "product_teacher",
]


@dataclass(frozen=True)
class TeacherSpec:
    """A target function of ``feature_count`` inputs.

    Either wraps a single network (``net``) whose inputs beyond
    ``feature_count`` are masked to zero, or sums the logits of component
    teachers over disjoint input slices (``components`` as pairs of
    (TeacherSpec, (start, stop))). ``vetting_score`` is the mean axis-slice
    R^2 when the teacher was vetted; lower means more nonlinear.
    """

    feature_count: int
    net: Mlp | None = None
    seed: int | None = None
    vetting_score: float | None = None
    components: tuple[tuple["TeacherSpec", tuple[int, int]], ...] | None = None

    @property
    def output_dim(self) -> int:
        if self.net is not None:
            return self.net.output_dim
        return self.components[0][0].output_dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return teacher_output(self, x)


def make_teacher(shape, k: int, seed: int) -> TeacherSpec:
    """Randomly initialized teacher of ``k`` features (biases zero).

    ``k`` must not exceed the network's input dimension; evaluation masks
    features >= k to zero.
    """
    shape = tuple(int(s) for s in shape)
    if not 1 <= k <= shape[0]:
        raise ValueError(f"feature count {k} outside 1..{shape[0]}")
    return TeacherSpec(feature_count=k, net=init_mlp(shape, seed), seed=seed)


def teacher_output(spec: TeacherSpec, x: np.ndarray) -> np.ndarray:
    """Teacher logits/outputs for a batch in the teacher's ambient space."""
    x = np.asarray(x, dtype=np.float64)
    if spec.components is not None:
        total = None
        for part, (start, stop) in spec.components:
            sub = np.zeros((x.shape[0], part.net.input_dim))
            sub[:, : stop - start] = x[:, start:stop]
            out = teacher_output(part, sub)
            total = out if total is None else total + out
        return total
    if x.shape[1] < spec.feature_count:
        raise ValueError(
            f"batch has {x.shape[1]} columns, need >= {spec.feature_count}"
        )
    if x.shape[1] > spec.feature_count:
        x = x.copy()
        x[:, spec.feature_count :] = 0.0
    if x.shape[1] > spec.net.input_dim:
        x = x[:, : spec.net.input_dim]  # dropped columns are masked zeros
    elif x.shape[1] < spec.net.input_dim:
        padded = np.zeros((x.shape[0], spec.net.input_dim))
        padded[:, : x.shape[1]] = x
        x = padded
    return forward(spec.net, x)


def _slice_scalar(out: np.ndarray, slice_target: str) -> np.ndarray:
    if out.shape[1] >= 2 and slice_target == "logit_diff":
        # the difference of the two logits is the quantity entering softmax
        return out[:, 0] - out[:, 1]
    return out[:, 0]


def vet_score(
    teacher: TeacherSpec,
    trials: int,
    seed: int,
    grid_points: int = 64,
    slice_target: str = "logit_diff",
) -> float:
    """Mean linear-fit R^2 over random axis slices; lower = more nonlinear.

    Each trial draws, per feature axis, a random base point in
    [-1/2, 1/2)^k, sweeps that axis over an even grid on [-1/2, 1/2],
    linearly regresses the teacher's scalar output against the axis, and
    records R^2. Scores average over axes, then over trials. A constant
    slice counts as perfectly linear (R^2 = 1).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if slice_target not in ("logit_diff", "first_logit"):
        raise ValueError(f"unknown slice_target {slice_target!r}")
    rng = make_rng(seed)
    k = teacher.feature_count
    grid = np.linspace(-0.5, 0.5, grid_points)
    total = 0.0
    for _ in range(trials):
        axis_scores = np.empty(k)
        for axis in range(k):
            base = rng.random(k) - 0.5
            x = np.tile(base, (grid_points, 1))
            x[:, axis] = grid
            y = _slice_scalar(teacher_output(teacher, x), slice_target)
            axis_scores[axis] = _linear_r2(grid, y)
        total += axis_scores.mean()
    return float(total / trials)


def _linear_r2(x: np.ndarray, y: np.ndarray) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return 1.0 - float(np.sum(resid**2)) / ss_tot


def _score_candidate(args):
    shape, k, cand_seed, trials, vet_seed, grid_points, slice_target = args
    teacher = make_teacher(shape, k, cand_seed)
    score = vet_score(teacher, trials, vet_seed, grid_points, slice_target)
    return cand_seed, score


def vet_teachers(
    shape,
    k: int,
    candidates: int,
    trials: int,
    seed: int,
    grid_points: int = 64,
    slice_target: str = "logit_diff",
    workers: int | None = None,
) -> TeacherSpec:
    """Generate ``candidates`` random teachers and keep the least linear one.

    Candidate seeds derive deterministically from ``seed``; the minimum
    score wins, ties broken by the lowest candidate seed. ``workers`` > 1
    scores candidates in parallel (results are schedule-independent).
    """
    if candidates < 1:
        raise ValueError("candidates must be >= 1")
    jobs = [
        (
            tuple(shape),
            k,
            derive_seed(seed, "teacher_candidate", i),
            trials,
            derive_seed(seed, "vet_trials", i),
            grid_points,
            slice_target,
        )
        for i in range(candidates)
    ]
    if workers is not None and workers > 1 and candidates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(_score_candidate, jobs, chunksize=8))
    else:
        scored = [_score_candidate(j) for j in jobs]
    best_seed, best_score = min(scored, key=lambda r: (r[1], r[0]))
    best = make_teacher(shape, k, best_seed)
    return replace(best, vetting_score=best_score)


def product_teacher(parts) -> TeacherSpec:
    """Additive composition of teachers over disjoint input slices.

    ``parts`` is a sequence of (TeacherSpec, (start, stop)) pairs whose
    slices tile [0, total_features) without gaps; each slice width must equal
    its teacher's feature count and all parts must share an output dimension.
    Output logits are the elementwise sum of the part logits evaluated on
    their slices. Parts with identical architecture must use distinct seeds
    so the composite cannot be collapsed to a repetition of one function.
    """
    parts = [(spec, (int(a), int(b))) for spec, (a, b) in parts]
    if not parts:
        raise ValueError("need at least one part")
    parts.sort(key=lambda p: p[1][0])
    expected_start = 0
    out_dim = parts[0][0].output_dim
    for spec, (start, stop) in parts:
        if start != expected_start:
            raise ValueError(f"slices must tile contiguously; gap/overlap at {start}")
        if stop - start != spec.feature_count:
            raise ValueError(
                f"slice ({start}, {stop}) width != part feature count {spec.feature_count}"
            )
        if spec.output_dim != out_dim:
            raise ValueError("all parts must share an output dimension")
        expected_start = stop
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            a, b = parts[i][0], parts[j][0]
            if a.net is None or b.net is None:
                continue
            if a.net.layer_sizes == b.net.layer_sizes:
                if a.seed is not None and a.seed == b.seed:
                    raise ValueError("identical-architecture parts must use distinct seeds")
                if np.array_equal(a.net.params, b.net.params):
                    raise ValueError("identical-architecture parts must differ in weights")
    if len(parts) == 1:
        return parts[0][0]
    return TeacherSpec(
        feature_count=expected_start,
        components=tuple(parts),
    )
