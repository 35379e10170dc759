"""Fully-connected ReLU network engine: forward, exact backprop, ADAM, training.

Hidden layers use ReLU and the output layer is linear, so every network here
computes a piecewise-linear function of its inputs. Parameters live in one
flat float64 vector; per-layer weight matrices and bias vectors are views
into it, which keeps the optimizer a plain vector update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import derive_seed, make_rng

__all__ = [
    "Mlp",
    "AdamState",
    "TrainSegment",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "LOSS_KINDS",
    "count_params",
    "init_mlp",
    "forward",
    "forward_activations",
    "softmax",
    "log_softmax",
    "loss",
    "kl_divergence_logits",
    "backward",
    "init_adam",
    "adam_step",
    "train",
    "evaluate_loss",
    "random_smooth_logits",
    "optimal_linear_logit_kl",
    "kl_region_scaling",
]

LOSS_KINDS = ("mse", "cross_entropy_logits", "pnorm")

_EVAL_CHUNK = 20000  # fixed so chunking never changes which samples are drawn


def count_params(layer_sizes) -> int:
    """Total parameter count: sum over layers of (fan_in + 1) * fan_out."""
    sizes = list(layer_sizes)
    return sum((fi + 1) * fo for fi, fo in zip(sizes[:-1], sizes[1:]))


def _validate_layer_sizes(layer_sizes) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least input and output entries")
    if any(s < 1 for s in sizes):
        raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
    return sizes


class Mlp:
    """A fully-connected ReLU network with value semantics.

    ``params`` is the flat parameter vector; ``weights[l]`` (fan_in, fan_out)
    and ``biases[l]`` are views into it, laid out layer by layer with each
    weight matrix followed by its bias vector.
    """

    __slots__ = ("layer_sizes", "params", "weights", "biases")

    def __init__(self, layer_sizes, params: np.ndarray | None = None):
        self.layer_sizes = _validate_layer_sizes(layer_sizes)
        n = count_params(self.layer_sizes)
        if params is None:
            params = np.zeros(n)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (n,):
                raise ValueError(f"expected {n} parameters, got shape {params.shape}")
        self.params = params
        self.weights, self.biases = _views(self.layer_sizes, self.params)

    @classmethod
    def from_arrays(cls, weights, biases) -> "Mlp":
        """Build a network from explicit per-layer weight/bias arrays."""
        sizes = [np.asarray(weights[0]).shape[0]]
        sizes += [np.asarray(w).shape[1] for w in weights]
        net = cls(sizes)
        for wv, bv, w, b in zip(net.weights, net.biases, weights, biases):
            wv[...] = np.asarray(w, dtype=np.float64)
            bv[...] = np.asarray(b, dtype=np.float64)
        return net

    @property
    def param_count(self) -> int:
        return self.params.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.params.copy())

    def __getstate__(self):
        return {"layer_sizes": self.layer_sizes, "params": self.params}

    def __setstate__(self, state):
        # rebuild weights/biases as views into the flat vector
        self.layer_sizes = state["layer_sizes"]
        self.params = state["params"]
        self.weights, self.biases = _views(self.layer_sizes, self.params)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Mlp)
            and self.layer_sizes == other.layer_sizes
            and np.array_equal(self.params, other.params)
        )


def _views(layer_sizes, flat):
    weights, biases, off = [], [], 0
    for fi, fo in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(flat[off : off + fi * fo].reshape(fi, fo))
        off += fi * fo
        biases.append(flat[off : off + fo])
        off += fo
    return weights, biases


def init_mlp(layer_sizes, seed: int, weight_scale_rule: str = "inv_sqrt_fan_in") -> Mlp:
    """Random network: weights ~ Normal(0, 1/sqrt(fan_in)), biases zero.

    Deterministic given ``seed``; the only supported scale rule draws each
    layer's weights with standard deviation 1/sqrt(layer input size).
    """
    if weight_scale_rule != "inv_sqrt_fan_in":
        raise ValueError(f"unknown weight_scale_rule {weight_scale_rule!r}")
    net = Mlp(layer_sizes)
    rng = make_rng(seed)
    for w in net.weights:
        fan_in = w.shape[0]
        w[...] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=w.shape)
    return net


def forward(net: Mlp, batch: np.ndarray) -> np.ndarray:
    """Outputs for a (B, D_in) batch: ReLU hidden layers, linear output."""
    a = _as_batch(net, batch)
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w + b
        if l < last:
            a = np.maximum(a, 0.0)
    return a


def forward_activations(net: Mlp, batch: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Outputs plus post-ReLU hidden activations; the last entry is the
    prefinal layer used for intrinsic-dimension measurement."""
    a = _as_batch(net, batch)
    hidden = []
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w + b
        if l < last:
            a = np.maximum(a, 0.0)
            hidden.append(a)
    return a, hidden


def _as_batch(net: Mlp, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ValueError(
            f"batch shape {batch.shape} incompatible with input dim {net.input_dim}"
        )
    return batch


def log_softmax(z: np.ndarray) -> np.ndarray:
    # shift by the row max before exponentiating; required for stability
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def per_sample_loss(kind: str, student_out, teacher_out, p: float = 2.0) -> np.ndarray:
    """Loss of each batch row; ``loss`` is the mean of this vector."""
    y = np.asarray(student_out, dtype=np.float64)
    t = np.asarray(teacher_out, dtype=np.float64)
    if y.shape != t.shape:
        raise ValueError(f"output shapes differ: {y.shape} vs {t.shape}")
    if not (np.isfinite(y).all() and np.isfinite(t).all()):
        raise FloatingPointError("non-finite network outputs")
    if kind == "mse":
        return np.mean((y - t) ** 2, axis=1)
    if kind == "pnorm":
        if p <= 0:
            raise ValueError(f"pnorm exponent must be > 0, got {p}")
        return np.mean(np.abs(y - t) ** p, axis=1)
    if kind == "cross_entropy_logits":
        if y.shape[1] < 2:
            raise ValueError("cross_entropy_logits needs at least 2 logits")
        return -(softmax(t) * log_softmax(y)).sum(axis=1)
    raise ValueError(f"unknown loss kind {kind!r}")


def loss(kind: str, student_out, teacher_out, p: float = 2.0) -> float:
    """Batch loss: mean squared error, soft-label cross entropy from logits,
    or the generalized |y - y*|**p loss (mean over the batch)."""
    return float(per_sample_loss(kind, student_out, teacher_out, p).mean())


def kl_divergence_logits(p_logits, q_logits) -> np.ndarray:
    """Per-sample KL(softmax(p) || softmax(q)); the cross entropy minus the
    teacher's own entropy, computed directly to avoid cancellation."""
    lp = log_softmax(np.asarray(p_logits, dtype=np.float64))
    lq = log_softmax(np.asarray(q_logits, dtype=np.float64))
    return (np.exp(lp) * (lp - lq)).sum(axis=1)


def _output_grad(kind: str, y: np.ndarray, t: np.ndarray, p: float) -> np.ndarray:
    b = y.shape[0]
    if kind == "mse":
        return 2.0 * (y - t) / (b * y.shape[1])
    if kind == "pnorm":
        e = y - t
        with np.errstate(divide="ignore", invalid="ignore"):
            g = p * np.abs(e) ** (p - 1.0) * np.sign(e)
        # subgradient 0 at the kink
        return np.where(e == 0.0, 0.0, g) / (b * y.shape[1])
    if kind == "cross_entropy_logits":
        return (softmax(y) - softmax(t)) / b
    raise ValueError(f"unknown loss kind {kind!r}")


def backward(
    net: Mlp, batch: np.ndarray, loss_kind: str, teacher_out: np.ndarray, p: float = 2.0
) -> np.ndarray:
    """Exact gradient of the batch loss with respect to the flat parameters."""
    grad, _ = _loss_grad(net, _as_batch(net, batch), loss_kind, teacher_out, p)
    return grad


def _loss_grad(net, x, loss_kind, teacher_out, p):
    """Flat gradient and loss value in one pass."""
    last = len(net.weights) - 1
    acts = [x]
    zs = []
    a = x
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        if l < last:
            zs.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            a = z
    y = a
    t = np.asarray(teacher_out, dtype=np.float64)
    value = loss(loss_kind, y, t, p)

    grad = np.empty_like(net.params)
    gw, gb = _views(net.layer_sizes, grad)
    delta = _output_grad(loss_kind, y, t, p)
    for l in range(last, -1, -1):
        gw[l][...] = acts[l].T @ delta
        gb[l][...] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l].T) * (zs[l - 1] > 0.0)
    return grad, value


@dataclass
class AdamState:
    """First/second moment accumulators; updated in place by adam_step."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0


def init_adam(n_params: int) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params))


def adam_step(
    state: AdamState,
    gradient: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    """One ADAM update with bias correction; default settings except lr.

    Returns the (mutated) state and the parameter increment to add.
    """
    if gradient.shape != state.m.shape:
        raise ValueError("gradient shape does not match optimizer state")
    if not np.isfinite(gradient).all():
        raise FloatingPointError("non-finite gradient")
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * gradient
    state.v *= beta2
    state.v += (1.0 - beta2) * gradient * gradient
    mhat = state.m / (1.0 - beta1**state.t)
    vhat = state.v / (1.0 - beta2**state.t)
    return state, (-lr) * mhat / (np.sqrt(vhat) + eps)


@dataclass(frozen=True)
class TrainSegment:
    steps: int
    batch_size: int
    learning_rate: float

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training segment {self}")


@dataclass(frozen=True)
class TrainConfig:
    """A step-function training schedule plus loss and seed.

    ``segments`` run in order, each drawing fresh uniform batches (the
    online, effectively infinite-data regime). ``pnorm_p`` is used only when
    ``loss_kind`` is "pnorm". The held-out evaluation draws
    ``eval_samples`` fresh inputs.
    """

    segments: tuple[TrainSegment, ...]
    loss_kind: str
    seed: int
    pnorm_p: float = 2.0
    eval_samples: int = 100_000

    def __post_init__(self):
        segs = tuple(
            s if isinstance(s, TrainSegment) else TrainSegment(*s) for s in self.segments
        )
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("schedule needs at least one segment")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.loss_kind == "pnorm" and self.pnorm_p <= 0:
            raise ValueError("pnorm exponent must be > 0")


@dataclass
class TrainResult:
    net: Mlp
    final_loss: float
    final_loss_stderr: float
    trace: np.ndarray  # structured: step, loss, lr, batch_size
    final_kl: float | None = None  # cross-entropy runs only
    final_kl_stderr: float | None = None


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss or gradient; carries the trace so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


_TRACE_DTYPE = np.dtype(
    [("step", np.int64), ("loss", np.float64), ("lr", np.float64), ("batch_size", np.int64)]
)


def _sample_inputs(rng, n, input_dim, feature_count):
    """Uniform on [-1/2, 1/2] in the first ``feature_count`` coordinates,
    zero elsewhere."""
    x = np.zeros((n, input_dim))
    x[:, :feature_count] = rng.random((n, feature_count)) - 0.5
    return x


def train(
    student: Mlp,
    teacher_fn,
    config: TrainConfig,
    feature_count: int | None = None,
) -> TrainResult:
    """Train ``student`` to imitate ``teacher_fn`` on fresh uniform batches.

    ``teacher_fn`` maps a (B, D_in) batch to target outputs. Each step draws
    a new batch, so dataset size is effectively infinite. The returned final
    loss is evaluated on ``config.eval_samples`` held-out samples, with its
    standard error; cross-entropy runs also report the KL gap between teacher
    and student output distributions (the cross entropy minus the teacher's
    entropy), the quantity that decays toward zero as students grow.

    Raises
    ------
    TrainingDivergedError
        On a non-finite loss or gradient; the exception carries the trace.
    """
    net = student.copy()
    k = net.input_dim if feature_count is None else int(feature_count)
    if not 1 <= k <= net.input_dim:
        raise ValueError(f"feature_count {k} outside 1..{net.input_dim}")
    rng = make_rng(derive_seed(config.seed, "train"))
    total_steps = sum(s.steps for s in config.segments)
    trace = np.empty(total_steps, dtype=_TRACE_DTYPE)
    state = init_adam(net.param_count)
    step = 0
    for seg in config.segments:
        for _ in range(seg.steps):
            x = _sample_inputs(rng, seg.batch_size, net.input_dim, k)
            targets = teacher_fn(x)
            try:
                grad, value = _loss_grad(net, x, config.loss_kind, targets, config.pnorm_p)
                _, delta = adam_step(state, grad, seg.learning_rate)
            except FloatingPointError as exc:
                raise TrainingDivergedError(
                    f"diverged at step {step}: {exc}", trace[:step].copy()
                ) from exc
            net.params += delta
            trace[step] = (step, value, seg.learning_rate, seg.batch_size)
            step += 1
    final_loss, stderr, kl, kl_stderr = evaluate_loss(
        net,
        teacher_fn,
        config.loss_kind,
        n_samples=config.eval_samples,
        seed=derive_seed(config.seed, "eval"),
        feature_count=k,
        pnorm_p=config.pnorm_p,
    )
    return TrainResult(
        net=net,
        final_loss=final_loss,
        final_loss_stderr=stderr,
        trace=trace,
        final_kl=kl,
        final_kl_stderr=kl_stderr,
    )


def evaluate_loss(
    net: Mlp,
    teacher_fn,
    loss_kind: str,
    n_samples: int,
    seed: int,
    feature_count: int | None = None,
    pnorm_p: float = 2.0,
) -> tuple[float, float, float | None, float | None]:
    """Mean loss over fresh samples, with standard error.

    Returns (loss, loss_stderr, kl, kl_stderr); the KL pair is None unless
    ``loss_kind`` is cross-entropy.
    """
    k = net.input_dim if feature_count is None else int(feature_count)
    rng = make_rng(seed)
    want_kl = loss_kind == "cross_entropy_logits"
    losses = np.empty(n_samples)
    kls = np.empty(n_samples) if want_kl else None
    done = 0
    while done < n_samples:
        b = min(_EVAL_CHUNK, n_samples - done)
        x = _sample_inputs(rng, b, net.input_dim, k)
        targets = np.asarray(teacher_fn(x), dtype=np.float64)
        out = forward(net, x)
        losses[done : done + b] = per_sample_loss(loss_kind, out, targets, pnorm_p)
        if want_kl:
            kls[done : done + b] = kl_divergence_logits(targets, out)
        done += b
    stderr = float(losses.std(ddof=1) / np.sqrt(n_samples))
    if want_kl:
        kl_stderr = float(kls.std(ddof=1) / np.sqrt(n_samples))
        return float(losses.mean()), stderr, float(kls.mean()), kl_stderr
    return float(losses.mean()), stderr, None, None


# ---------------------------------------------------------------------------
# Local KL shrinkage study: how the best linear-logit fit of a smooth target
# distribution improves as the region shrinks. The optimal fit error is
# quadratic in position, so the mean KL over a cube of side s falls as s**4.
# ---------------------------------------------------------------------------


def random_smooth_logits(dim: int, seed: int, n_classes: int = 2):
    """A random smooth logit function R^dim -> R^n_classes.

    Each component is a random cubic polynomial, so the target distribution
    is smooth with generically nonzero curvature everywhere.
    """
    rng = make_rng(seed)
    const = rng.normal(0.0, 0.5, size=n_classes)
    lin = rng.normal(0.0, 1.0, size=(n_classes, dim))
    quad = rng.normal(0.0, 1.0, size=(n_classes, dim, dim))
    cub = rng.normal(0.0, 0.5, size=(n_classes, dim))

    def logits(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = const + x @ lin.T
        for i in range(n_classes):
            out[:, i] += 0.5 * np.einsum("bi,ij,bj->b", x, quad[i], x)
            out[:, i] += np.sum(cub[i] * x**3, axis=1)
        return out

    return logits


def _gauss_legendre_grid(dim: int, center, side: float, points_per_axis: int):
    nodes, weights = np.polynomial.legendre.leggauss(points_per_axis)
    nodes = 0.5 * side * nodes  # map [-1, 1] onto [-side/2, side/2]
    weights = weights / 2.0  # normalize so total weight is 1 per axis
    if dim == 1:
        x = np.asarray(center) + nodes[:, None]
        return x, weights
    grids = np.meshgrid(*([nodes] * dim), indexing="ij")
    x = np.stack([g.ravel() for g in grids], axis=1) + np.asarray(center)
    w = weights
    for _ in range(dim - 1):
        w = np.outer(w, weights).ravel()
    return x, w


def optimal_linear_logit_kl(
    logit_fn, center, side: float, points_per_axis: int = 16
) -> float:
    """Minimal mean KL(f || softmax(linear)) over a cube of given side.

    The cube is centered at ``center``; the mean is taken with Gauss-Legendre
    quadrature (weights normalized to the cube volume, so the result is the
    loss per unit volume). The quadrature makes this an exactly convex finite
    problem solved by damped Newton iterations to machine precision.
    """
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))
    dim = center.shape[0]
    x, w = _gauss_legendre_grid(dim, center, side, points_per_axis)
    target_logits = logit_fn(x)
    n_classes = target_logits.shape[1]
    f = softmax(target_logits)
    phi = np.concatenate([np.ones((x.shape[0], 1)), x - center], axis=1)  # (m, dim+1)
    n_basis = phi.shape[1]

    # params: (n_classes, n_basis) linear logit coefficients
    coef = np.zeros((n_classes, n_basis))
    coef[:, 0] = target_logits.mean(axis=0)  # start from the mean logits

    def kl_value(c):
        q_logits = phi @ c.T
        lf = log_softmax(target_logits)
        lq = log_softmax(q_logits)
        return float(np.dot(w, (np.exp(lf) * (lf - lq)).sum(axis=1)))

    value = kl_value(coef)
    for _ in range(100):
        q = softmax(phi @ coef.T)  # (m, n_classes)
        resid = q - f
        grad = (resid * w[:, None]).T @ phi  # (n_classes, n_basis)
        # Gauss-Newton/Hessian of the KL in the logit parameters:
        # H[(i,a),(j,b)] = sum_m w_m (diag(q)-q q^T)_{ij} phi_a phi_b
        n_p = n_classes * n_basis
        hess = np.zeros((n_p, n_p))
        for i in range(n_classes):
            for j in range(n_classes):
                s = q[:, i] * ((i == j) - q[:, j]) * w
                block = (phi * s[:, None]).T @ phi
                hess[i * n_basis : (i + 1) * n_basis, j * n_basis : (j + 1) * n_basis] = block
        step = np.linalg.lstsq(hess, -grad.ravel(), rcond=None)[0].reshape(coef.shape)
        # backtracking keeps the iteration monotone far from the optimum
        scale = 1.0
        for _ in range(60):
            new_value = kl_value(coef + scale * step)
            if new_value <= value:
                break
            scale *= 0.5
        coef = coef + scale * step
        if value - new_value <= 1e-16 * max(1.0, abs(value)):
            value = min(value, new_value)
            break
        value = new_value
    return value


def kl_region_scaling(
    dim: int,
    seed: int,
    sides=(0.2, 0.1, 0.05, 0.025),
    points_per_axis: int = 16,
) -> tuple[float, list[tuple[float, float]]]:
    """Slope of log(optimal KL) vs log(side) for a random smooth target.

    A piecewise-linear model with one region per cube achieves KL that
    shrinks like side**4, so the returned slope is close to 4.
    """
    logit_fn = random_smooth_logits(dim, seed)
    center = make_rng(derive_seed(seed, "center")).uniform(-0.3, 0.3, size=dim)
    pairs = [
        (s, optimal_linear_logit_kl(logit_fn, center, s, points_per_axis)) for s in sides
    ]
    xs = np.log([s for s, _ in pairs])
    ys = np.log([v for _, v in pairs])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return slope, pairs
