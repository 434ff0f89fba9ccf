"""Deep linear / ReLU softmax students and full-batch SGD training.

Single-task students are plain layer stacks; multitask students share a trunk
and own one head per task, trained on the unweighted sum of both tasks'
cross-entropy losses (loss weights configurable but 1 by default). Training
is full-batch gradient descent with explicit-Euler step 1/tau; that is the
only batch mode, since every theoretical statement being checked concerns
the deterministic flow.

Hard one-hot targets are the default (the infinite-sharpness limit of the
teacher's softmax); soft targets can be passed explicitly for finite-
sharpness experiments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import (
    DivergenceError,
    InvalidInputError,
    SvdTriple,
    rng_from_seed,
    softmax_columns,
)
from .teachers import Dataset, Teacher

__all__ = [
    "StudentArch",
    "Student",
    "MultitaskStudent",
    "TrainConfig",
    "Trajectory",
    "LossEstimate",
    "init_student",
    "init_multitask_student",
    "forward",
    "composite_weight",
    "train_loss",
    "generalization_loss",
    "layer_gradients",
    "sgd_step",
    "train",
    "train_multitask",
]


@dataclass(frozen=True)
class StudentArch:
    """Layer widths N_0..N_L, activation, and initialization recipe.

    init="random" draws each layer i.i.d. N(0, init_scale^2 / fan_in);
    init="training_aligned" copies the teacher's top singular vectors and
    starts every active mode at init_singular_values (composite scale), with
    per-layer values s0**(1/L).
    """

    layer_widths: tuple
    activation: str = "linear"
    init: str = "random"
    init_scale: float = 0.01
    init_singular_values: tuple = (0.1,)

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(
            self, "init_singular_values", tuple(float(s) for s in self.init_singular_values)
        )
        if len(self.layer_widths) < 2:
            raise InvalidInputError("need at least 2 layers (input and output)")
        if any(w <= 0 for w in self.layer_widths):
            raise InvalidInputError("layer widths must be positive")
        if self.activation not in ("linear", "relu"):
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.init not in ("random", "training_aligned"):
            raise InvalidInputError(f"unknown init {self.init!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1


@dataclass(frozen=True)
class Student:
    """Ordered weight stack; layers[l] has shape (N_{l+1}, N_l)."""

    layers: tuple
    arch: StudentArch

    def copy(self) -> "Student":
        return Student(tuple(w.copy() for w in self.layers), self.arch)


@dataclass(frozen=True)
class MultitaskStudent:
    """Shared trunk plus one linear head per task."""

    trunk: tuple
    head_a: np.ndarray
    head_b: np.ndarray
    activation: str = "linear"

    def task_student(self, task: str) -> Student:
        """View one task's path as a plain Student (shared trunk arrays)."""
        head = self.head_a if task == "a" else self.head_b
        widths = (self.trunk[0].shape[1],) + tuple(w.shape[0] for w in self.trunk)
        widths = widths + (head.shape[0],)
        arch = StudentArch(widths, activation=self.activation)
        return Student(tuple(self.trunk) + (head,), arch)


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch SGD settings plus the generalization-test protocol."""

    learning_rate: float
    steps: int
    record_every: int = 10
    loss_weights: tuple = (1.0, 1.0)
    batch: str = "full"
    n_test: int = 10_000
    test_seed: int = 0
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.steps < 0:
            raise InvalidInputError("steps must be non-negative")
        if self.record_every < 1:
            raise InvalidInputError("record_every must be at least 1")
        if self.batch != "full":
            raise InvalidInputError("only full-batch training is supported")


class LossEstimate(NamedTuple):
    value: float
    stderr: float


@dataclass(frozen=True)
class Trajectory:
    """Time series of one training run, sampled every record_every steps."""

    steps: np.ndarray
    train_loss: np.ndarray
    gen_loss: np.ndarray
    gen_loss_stderr: np.ndarray
    singular_values: np.ndarray
    final_student: Optional[Student]
    composites: Optional[np.ndarray] = None
    source: str = "empirical"

    @property
    def n_records(self) -> int:
        return self.steps.size

    def argmin_gen(self) -> tuple:
        """(step, loss, stderr) at the recorded generalization-loss minimum."""
        i = int(np.argmin(self.gen_loss))
        return int(self.steps[i]), float(self.gen_loss[i]), float(self.gen_loss_stderr[i])


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((n_classes, labels.size))
    out[labels.astype(int), np.arange(labels.size)] = 1.0
    return out


def _log_softmax_loss(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy between target distributions and softmax(logits)."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=0))
    return float(np.mean((targets * (lse - shifted)).sum(axis=0)))


def composite_weight(student: Student) -> np.ndarray:
    w = student.layers[0]
    for layer in student.layers[1:]:
        w = layer @ w
    return w


def init_student(arch: StudentArch, teacher_svd: Optional[SvdTriple] = None, seed=0) -> Student:
    """Build a student per the arch's init recipe."""
    gen = rng_from_seed(seed)
    widths = arch.layer_widths
    if arch.init == "random":
        layers = tuple(
            arch.init_scale / np.sqrt(widths[l]) * gen.standard_normal((widths[l + 1], widths[l]))
            for l in range(arch.n_layers)
        )
        return Student(layers, arch)

    if teacher_svd is None:
        raise InvalidInputError("training_aligned init requires the teacher SVD")
    s0 = np.asarray(arch.init_singular_values, dtype=np.float64)
    k = s0.size
    if k > teacher_svd.rank or any(w < k for w in widths):
        raise InvalidInputError("TA init needs k modes <= every layer width and teacher rank")
    u_hat = teacher_svd.u[:, :k]
    v_hat = teacher_svd.v[:, :k]
    vals = s0 ** (1.0 / arch.n_layers)
    layers = []
    for l in range(arch.n_layers):
        left = np.eye(widths[l + 1])[:, :k] if l < arch.n_layers - 1 else u_hat
        right = v_hat if l == 0 else np.eye(widths[l])[:, :k]
        layers.append((left * vals) @ right.T)
    return Student(tuple(layers), arch)


def init_multitask_student(
    trunk_widths: Sequence[int],
    n_classes_a: int,
    n_classes_b: int,
    activation: str = "linear",
    init: str = "random",
    init_scale: float = 0.01,
    s0: float = 0.1,
    svd_a: Optional[SvdTriple] = None,
    svd_b: Optional[SvdTriple] = None,
    n_modes: int = 1,
    seed=0,
) -> MultitaskStudent:
    """Shared-trunk student for two tasks.

    Random init draws every trunk layer and both heads at init_scale/sqrt(fan).
    Training-aligned init (single trunk layer only) places the trunk's right
    frame on [V_A, V_perp] where V_perp orthonormalizes V_B against V_A, so
    both composite weights start exactly on their own teacher frames at
    composite scale s0, with all layer singular values sqrt(s0).
    """
    widths = tuple(int(w) for w in trunk_widths)
    if len(widths) < 2:
        raise InvalidInputError("trunk needs at least input and one hidden width")
    gen = rng_from_seed(seed)
    if init == "random":
        trunk = tuple(
            init_scale / np.sqrt(widths[l]) * gen.standard_normal((widths[l + 1], widths[l]))
            for l in range(len(widths) - 1)
        )
        n_hidden = widths[-1]
        head_a = init_scale / np.sqrt(n_hidden) * gen.standard_normal((n_classes_a, n_hidden))
        head_b = init_scale / np.sqrt(n_hidden) * gen.standard_normal((n_classes_b, n_hidden))
        return MultitaskStudent(trunk, head_a, head_b, activation)

    if init != "training_aligned":
        raise InvalidInputError(f"unknown init {init!r}")
    if svd_a is None or svd_b is None:
        raise InvalidInputError("training_aligned multitask init requires both teacher SVDs")
    if len(widths) != 2:
        raise InvalidInputError("training_aligned multitask init supports a single trunk layer")
    k = int(n_modes)
    n_hidden = widths[1]
    v_a = svd_a.v[:, :k]
    u_a = svd_a.u[:, :k]
    v_b = svd_b.v[:, :k]
    u_b = svd_b.u[:, :k]
    # Orthonormalize V_B against span(V_A): V_B = V_A rho + Q R.
    rho = v_a.T @ v_b
    resid = v_b - v_a @ rho
    q, rr = np.linalg.qr(resid)
    signs = np.sign(np.sign(np.diag(rr)) + 0.5)  # zero diagonals stay +1
    q = q * signs
    rr = signs[:, None] * rr
    use_perp = np.linalg.norm(rr) > 1e-12
    n_trunk_modes = 2 * k if use_perp else k
    if n_hidden < n_trunk_modes:
        raise InvalidInputError("hidden width too small for both tasks' TA modes")
    m = np.sqrt(s0)
    trunk = np.zeros((n_hidden, widths[0]))
    trunk[:k] = m * v_a.T
    if use_perp:
        trunk[k : 2 * k] = m * q.T
    head_a = np.zeros((n_classes_a, n_hidden))
    head_a[:, :k] = (s0 / m) * u_a
    head_b = np.zeros((n_classes_b, n_hidden))
    head_b[:, :k] = u_b @ (s0 / m * rho.T)
    if use_perp:
        head_b[:, k : 2 * k] = u_b @ (s0 / m * rr.T)
    return MultitaskStudent((trunk,), head_a, head_b, activation)


def _forward_cache(layers, activation: str, x: np.ndarray):
    """Hidden activations (post-nonlinearity) for layers[:-1], plus logits."""
    hidden = []
    h = x
    for w in layers[:-1]:
        a = w @ h
        if activation == "relu":
            a = np.maximum(a, 0.0)
        hidden.append(a)
        h = a
    return hidden, layers[-1] @ h


def forward(student: Student, x) -> np.ndarray:
    """Class probabilities per column of x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != student.arch.layer_widths[0]:
        raise InvalidInputError("input rows must match the student's input width")
    _, logits = _forward_cache(student.layers, student.arch.activation, x)
    return softmax_columns(logits)


def train_loss(student: Student, dataset: Dataset) -> float:
    """Cross-entropy of the student against the dataset's noisy labels."""
    x = dataset.x
    if x.shape[0] != student.arch.layer_widths[0]:
        raise InvalidInputError("dataset features do not match student input width")
    _, logits = _forward_cache(student.layers, student.arch.activation, x)
    targets = _one_hot(dataset.noisy_labels, logits.shape[0])
    return _log_softmax_loss(logits, targets)


def generalization_loss(
    student: Student,
    teacher: Teacher,
    n_test: int = 10_000,
    c_x: Optional[np.ndarray] = None,
    seed=0,
) -> LossEstimate:
    """Monte Carlo estimate of the clean-label test cross-entropy."""
    if n_test < 1:
        raise InvalidInputError("n_test must be at least 1")
    x, labels = _draw_test_set(teacher, n_test, c_x, seed)
    return _gen_loss_on(student.layers, student.arch.activation, x, labels)


def _draw_test_set(teacher: Teacher, n_test: int, c_x, seed):
    from .teachers import _covariance_factor  # local to avoid cycle at import

    gen = rng_from_seed(seed)
    white = gen.standard_normal((teacher.n_features, int(n_test)))
    if c_x is None:
        x = white
    else:
        c = np.asarray(c_x, dtype=np.float64)
        x = white if np.allclose(c, np.eye(c.shape[0])) else _covariance_factor(c) @ white
    labels = np.argmax(teacher.w_bar @ x, axis=0)
    return x, labels


def _gen_loss_on(layers, activation, x_test, clean_labels) -> LossEstimate:
    _, logits = _forward_cache(layers, activation, x_test)
    shifted = logits - logits.max(axis=0, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=0))
    per_sample = lse - shifted[clean_labels, np.arange(clean_labels.size)]
    n = per_sample.size
    stderr = float(per_sample.std(ddof=0) / np.sqrt(n)) if n > 1 else 0.0
    return LossEstimate(float(per_sample.mean()), stderr)


def layer_gradients(student: Student, x, targets) -> list:
    """Gradients of the mean cross-entropy w.r.t. each layer (backprop)."""
    return _backprop(list(student.layers), student.arch.activation, np.asarray(x), np.asarray(targets))


def _backprop(layers, activation, x, targets):
    hidden, logits = _forward_cache(layers, activation, x)
    n = x.shape[1]
    delta = (softmax_columns(logits) - targets) / n
    grads = [None] * len(layers)
    inputs = [x] + hidden
    for l in range(len(layers) - 1, -1, -1):
        grads[l] = delta @ inputs[l].T
        if l > 0:
            delta = layers[l].T @ delta
            if activation == "relu":
                delta = delta * (hidden[l - 1] > 0)
    return grads


def sgd_step(
    student: Student,
    dataset: Dataset,
    cfg: TrainConfig,
    targets: Optional[np.ndarray] = None,
) -> Student:
    """One full-batch gradient step; hard one-hot targets unless overridden."""
    _, logits_width = student.arch.layer_widths[0], student.arch.layer_widths[-1]
    if targets is None:
        targets = _one_hot(dataset.noisy_labels, logits_width)
    grads = _backprop(list(student.layers), student.arch.activation, dataset.x, targets)
    new_layers = tuple(w - cfg.learning_rate * g for w, g in zip(student.layers, grads))
    return Student(new_layers, student.arch)


def _check_divergence(step: int, loss: float, threshold: float):
    if not np.isfinite(loss) or loss > threshold:
        raise DivergenceError(step, loss)


def train(
    student: Student,
    dataset: Dataset,
    teacher: Teacher,
    cfg: TrainConfig,
    targets: Optional[np.ndarray] = None,
) -> Trajectory:
    """Full-batch SGD run recording losses and composite singular values.

    The generalization test set is drawn once from cfg.test_seed and reused
    at every record, so recorded test losses differ only through the weights.
    """
    x = dataset.x
    if x.shape[0] != student.arch.layer_widths[0]:
        raise InvalidInputError("dataset features do not match student input width")
    n_classes = student.arch.layer_widths[-1]
    if targets is None:
        targets = _one_hot(dataset.noisy_labels, n_classes)
    x_test, test_labels = _draw_test_set(teacher, cfg.n_test, dataset.input_covariance, cfg.test_seed)

    layers = [w.copy() for w in student.layers]
    act = student.arch.activation
    eta = cfg.learning_rate

    rec_steps, rec_train, rec_gen, rec_gen_se, rec_sv, rec_w = [], [], [], [], [], []

    def record(step):
        hidden, logits = _forward_cache(layers, act, x)
        loss = _log_softmax_loss(logits, targets)
        _check_divergence(step, loss, cfg.divergence_threshold)
        gl = _gen_loss_on(layers, act, x_test, test_labels)
        w = layers[0]
        for lw in layers[1:]:
            w = lw @ w
        rec_steps.append(step)
        rec_train.append(loss)
        rec_gen.append(gl.value)
        rec_gen_se.append(gl.stderr)
        rec_sv.append(np.linalg.svd(w, compute_uv=False))
        rec_w.append(w)

    for step in range(cfg.steps + 1):
        if step % cfg.record_every == 0 or step == cfg.steps:
            record(step)
        if step == cfg.steps:
            break
        grads = _backprop(layers, act, x, targets)
        for l in range(len(layers)):
            layers[l] -= eta * grads[l]
        if not all(np.all(np.isfinite(w)) for w in layers):
            raise DivergenceError(step + 1, float("nan"))

    final = Student(tuple(layers), student.arch)
    return Trajectory(
        steps=np.array(rec_steps, dtype=int),
        train_loss=np.array(rec_train),
        gen_loss=np.array(rec_gen),
        gen_loss_stderr=np.array(rec_gen_se),
        singular_values=np.array(rec_sv),
        final_student=final,
        composites=np.array(rec_w),
    )


def train_multitask(
    ms: MultitaskStudent,
    d_a: Dataset,
    d_b: Dataset,
    t_a: Teacher,
    t_b: Teacher,
    cfg: TrainConfig,
    targets_a: Optional[np.ndarray] = None,
    targets_b: Optional[np.ndarray] = None,
) -> tuple:
    """Joint training on loss_weights[0]*L_A + loss_weights[1]*L_B.

    The trunk accumulates both tasks' gradients (task A then task B; exact
    addition, so the order is immaterial); each head sees only its own task.
    Returns one Trajectory per task, each scored against its own teacher.
    """
    if d_a.x.shape[0] != d_b.x.shape[0]:
        raise InvalidInputError("both datasets must share n_features")
    alpha_a, alpha_b = cfg.loss_weights
    trunk = [w.copy() for w in ms.trunk]
    heads = {"a": ms.head_a.copy(), "b": ms.head_b.copy()}
    act = ms.activation
    eta = cfg.learning_rate

    data = {"a": d_a, "b": d_b}
    teachers = {"a": t_a, "b": t_b}
    alphas = {"a": alpha_a, "b": alpha_b}
    given = {"a": targets_a, "b": targets_b}
    targets = {
        t: given[t] if given[t] is not None
        else _one_hot(data[t].noisy_labels, heads[t].shape[0])
        for t in ("a", "b")
    }
    tests = {
        t: _draw_test_set(teachers[t], cfg.n_test, data[t].input_covariance, cfg.test_seed)
        for t in ("a", "b")
    }

    recs = {
        t: {"steps": [], "train": [], "gen": [], "gen_se": [], "sv": [], "w": []}
        for t in ("a", "b")
    }

    def task_layers(t):
        return trunk + [heads[t]]

    def record(step):
        for t in ("a", "b"):
            layers = task_layers(t)
            _, logits = _forward_cache(layers, act, data[t].x)
            loss = _log_softmax_loss(logits, targets[t])
            _check_divergence(step, loss, cfg.divergence_threshold)
            gl = _gen_loss_on(layers, act, *tests[t])
            w = layers[0]
            for lw in layers[1:]:
                w = lw @ w
            r = recs[t]
            r["steps"].append(step)
            r["train"].append(loss)
            r["gen"].append(gl.value)
            r["gen_se"].append(gl.stderr)
            r["sv"].append(np.linalg.svd(w, compute_uv=False))
            r["w"].append(w)

    for step in range(cfg.steps + 1):
        if step % cfg.record_every == 0 or step == cfg.steps:
            record(step)
        if step == cfg.steps:
            break
        trunk_updates = [np.zeros_like(w) for w in trunk]
        head_updates = {}
        for t in ("a", "b"):
            grads = _backprop(task_layers(t), act, data[t].x, targets[t])
            for l in range(len(trunk)):
                trunk_updates[l] += alphas[t] * grads[l]
            head_updates[t] = alphas[t] * grads[-1]
        for l in range(len(trunk)):
            trunk[l] -= eta * trunk_updates[l]
        for t in ("a", "b"):
            heads[t] -= eta * head_updates[t]
        finite = all(np.all(np.isfinite(w)) for w in trunk) and all(
            np.all(np.isfinite(h)) for h in heads.values()
        )
        if not finite:
            raise DivergenceError(step + 1, float("nan"))

    final = MultitaskStudent(tuple(trunk), heads["a"], heads["b"], act)
    out = []
    for t in ("a", "b"):
        r = recs[t]
        out.append(
            Trajectory(
                steps=np.array(r["steps"], dtype=int),
                train_loss=np.array(r["train"]),
                gen_loss=np.array(r["gen"]),
                gen_loss_stderr=np.array(r["gen_se"]),
                singular_values=np.array(r["sv"]),
                final_student=final.task_student(t),
                composites=np.array(r["w"]),
            )
        )
    return tuple(out)
