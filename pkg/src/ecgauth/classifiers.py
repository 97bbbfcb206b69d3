"""Per-user binary authenticators and hyperparameter selection.

The primary model is a soft-margin RBF-kernel SVM trained by sequential
minimal optimization with maximal-violating-pair working-set selection.
Logistic regression (full-batch gradient descent with backtracking) and
k-nearest-neighbors serve as baselines.  Classes are weighted inversely
to their frequency because impostor beats vastly outnumber genuine ones.
Hyperparameters are chosen by stratified k-fold cross-validation on
balanced accuracy; the decision threshold is fixed at the equal-error
point of the training scores.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureVector, with_label
from .metrics import ScoreSet, compute_eer

log = logging.getLogger(__name__)

KINDS = ("svm", "logistic", "knn")

SMO_TOL = 1e-3
SMO_MAX_ITER = 100_000
LOGISTIC_TOL = 1e-6
LOGISTIC_MAX_ITER = 20_000


class ConvergenceError(RuntimeError):
    """Training failed to reach its tolerance; carries the final residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class HyperGrid:
    """Candidate hyperparameters for cross-validated selection."""

    svm_c: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    svm_gamma: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0)
    knn_k: tuple[int, ...] = (1, 3, 5, 7)
    logistic_l2: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0)
    folds: int = 5

    def __post_init__(self):
        for name in ("svm_c", "svm_gamma", "knn_k", "logistic_l2"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be non-empty")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")

    def candidates(self, kind: str) -> list[dict]:
        if kind == "svm":
            return [{"c": c, "gamma": g} for c in self.svm_c for g in self.svm_gamma]
        if kind == "logistic":
            return [{"l2": l2} for l2 in self.logistic_l2]
        if kind == "knn":
            return [{"k": k} for k in self.knn_k]
        raise ValueError(f"unknown classifier kind {kind!r}")


@dataclass(eq=False)
class LabeledSet:
    """Feature vectors labeled genuine/impostor relative to one target user."""

    vectors: tuple[FeatureVector, ...]
    target: str

    def __post_init__(self):
        self.vectors = tuple(with_label(v, self.target) for v in self.vectors)
        self.x = np.vstack([v.values for v in self.vectors])
        self.y = np.asarray([1.0 if v.genuine_label else -1.0 for v in self.vectors])
        self.subjects = tuple(v.subject for v in self.vectors)
        n_pos = int((self.y > 0).sum())
        if n_pos == 0 or n_pos == self.y.size:
            raise ValueError("labeled set needs at least one genuine and one impostor vector")

    def __len__(self) -> int:
        return self.y.size

    @property
    def n_positive(self) -> int:
        return int((self.y > 0).sum())

    def subset(self, rows: np.ndarray) -> "LabeledSet":
        return LabeledSet(tuple(self.vectors[int(i)] for i in rows), self.target)


def class_weights(y: np.ndarray) -> tuple[float, float]:
    """(positive, negative) weights inversely proportional to class frequency."""
    n = y.size
    n_pos = int((y > 0).sum())
    n_neg = n - n_pos
    return n / (2.0 * n_pos), n / (2.0 * n_neg)


# ---------------------------------------------------------------------------
# SVM via sequential minimal optimization

@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray  # (m, d)
    dual_coef: np.ndarray  # (m,), alpha_i * y_i
    bias: float
    gamma: float
    c: float
    kkt_residual: float
    iterations: int


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def smo_solve(
    kernel: np.ndarray,
    y: np.ndarray,
    cap: np.ndarray,
    tol: float = SMO_TOL,
    max_iter: int = SMO_MAX_ITER,
) -> tuple[np.ndarray, float, float, int]:
    """Maximize the SVM dual by repeated optimization of the maximal violating pair.

    Minimizes f(a) = a'Qa/2 - sum(a) with Q = yy' * K subject to
    0 <= a_i <= cap_i and sum(a_i y_i) = 0.  Returns (alpha, bias,
    kkt_residual, iterations); raises ConvergenceError at the iteration cap.
    """
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of f at alpha = Q a - 1
    neg_inf = -np.inf
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        neg_yg = -y * grad
        up = ((y > 0) & (alpha < cap)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < cap)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            residual = 0.0
            break
        i = int(np.argmax(np.where(up, neg_yg, neg_inf)))
        j = int(np.argmin(np.where(low, neg_yg, np.inf)))
        residual = float(neg_yg[i] - neg_yg[j])
        if residual <= tol:
            break
        eta = max(kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j], 1e-12)
        t = residual / eta
        t_max_i = cap[i] - alpha[i] if y[i] > 0 else alpha[i]
        t_max_j = alpha[j] if y[j] > 0 else cap[j] - alpha[j]
        t = min(t, t_max_i, t_max_j)
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        for idx in (i, j):
            if alpha[idx] < 1e-12 * cap[idx]:
                alpha[idx] = 0.0
            elif alpha[idx] > cap[idx] * (1.0 - 1e-12):
                alpha[idx] = cap[idx]
        grad += t * y * (kernel[:, i] - kernel[:, j])
    else:
        raise ConvergenceError(f"SMO did not converge within {max_iter} iterations", residual)

    neg_yg = -y * grad
    free = (alpha > 0.0) & (alpha < cap)
    if free.any():
        bias = float(neg_yg[free].mean())
    else:
        up = ((y > 0) & (alpha < cap)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < cap)) | ((y > 0) & (alpha > 0))
        hi = neg_yg[up].max() if up.any() else 0.0
        lo = neg_yg[low].min() if low.any() else 0.0
        bias = float(0.5 * (hi + lo))
    return alpha, bias, max(residual, 0.0), iterations


def train_svm(
    data: LabeledSet,
    c: float,
    gamma: float,
    tol: float = SMO_TOL,
    max_iter: int = SMO_MAX_ITER,
) -> SvmModel:
    """Soft-margin RBF SVM with frequency-balanced per-class box constraints."""
    if c <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    w_pos, w_neg = class_weights(data.y)
    cap = np.where(data.y > 0, c * w_pos, c * w_neg)
    kernel = rbf_kernel(data.x, data.x, gamma)
    alpha, bias, residual, iterations = smo_solve(kernel, data.y, cap, tol=tol, max_iter=max_iter)
    sv = alpha > 0.0
    return SvmModel(
        support_vectors=data.x[sv].copy(),
        dual_coef=(alpha * data.y)[sv].copy(),
        bias=bias,
        gamma=gamma,
        c=c,
        kkt_residual=residual,
        iterations=iterations,
    )


def svm_decision(model: SvmModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    if model.support_vectors.shape[0] == 0:
        return np.full(x.shape[0], model.bias)
    k = rbf_kernel(x, model.support_vectors, model.gamma)
    return k @ model.dual_coef + model.bias


def svm_dual_objective(alpha: np.ndarray, kernel: np.ndarray, y: np.ndarray) -> float:
    """Dual objective sum(a) - a'Qa/2 for diagnostics and oracle comparison."""
    v = alpha * y
    return float(alpha.sum() - 0.5 * (v @ kernel @ v))


# ---------------------------------------------------------------------------
# logistic regression

@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    l2: float
    grad_norm: float
    iterations: int


def logistic_loss_grad(
    w: np.ndarray,
    b: float,
    x: np.ndarray,
    y: np.ndarray,
    l2: float,
    sample_weight: np.ndarray,
) -> tuple[float, np.ndarray, float]:
    """Weighted mean negative log-likelihood with an L2 penalty on the weights."""
    margin = -y * (x @ w + b)
    loss = float(np.mean(sample_weight * np.logaddexp(0.0, margin)) + 0.5 * l2 * (w @ w))
    sig = 1.0 / (1.0 + np.exp(-margin))
    coef = sample_weight * (-y) * sig / y.size
    grad_w = x.T @ coef + l2 * w
    grad_b = float(coef.sum())
    return loss, grad_w, grad_b


def train_logistic(
    data: LabeledSet,
    l2: float,
    tol: float = LOGISTIC_TOL,
    max_iter: int = LOGISTIC_MAX_ITER,
) -> LogisticModel:
    """Deterministic full-batch gradient descent with backtracking line search.

    Terminates when the gradient norm falls to ``tol``; the loss sequence is
    monotonically non-increasing by the Armijo condition.
    """
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    x, y = data.x, data.y
    w_pos, w_neg = class_weights(y)
    sw = np.where(y > 0, w_pos, w_neg)
    w = np.zeros(x.shape[1])
    b = 0.0
    step = 1.0
    loss, grad_w, grad_b = logistic_loss_grad(w, b, x, y, l2, sw)
    for iterations in range(1, max_iter + 1):
        gnorm = math.sqrt(float(grad_w @ grad_w) + grad_b * grad_b)
        if gnorm <= tol:
            return LogisticModel(weights=w, bias=float(b), l2=l2, grad_norm=gnorm, iterations=iterations - 1)
        step = min(step * 2.0, 1e6)
        while True:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            loss_new, grad_w_new, grad_b_new = logistic_loss_grad(w_new, b_new, x, y, l2, sw)
            if loss_new <= loss - 1e-4 * step * gnorm * gnorm:
                break
            step *= 0.5
            if step < 1e-18:
                raise ConvergenceError("logistic line search collapsed", gnorm)
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, grad_w_new, grad_b_new
    gnorm = math.sqrt(float(grad_w @ grad_w) + grad_b * grad_b)
    raise ConvergenceError(f"logistic regression did not reach tolerance in {max_iter} iterations", gnorm)


def logistic_probability(model: LogisticModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return 1.0 / (1.0 + np.exp(-(x @ model.weights + model.bias)))


# ---------------------------------------------------------------------------
# k-nearest neighbors

@dataclass(frozen=True, eq=False)
class KnnModel:
    train_x: np.ndarray
    train_y: np.ndarray
    k: int


def train_knn(data: LabeledSet, k: int) -> KnnModel:
    if not 1 <= k <= len(data):
        raise ValueError(f"k must lie in [1, {len(data)}], got {k}")
    return KnnModel(train_x=data.x.copy(), train_y=data.y.copy(), k=k)


def knn_score(model: KnnModel, x: np.ndarray) -> np.ndarray:
    """Fraction of genuine labels among the k nearest training vectors.

    Distance ties are broken toward the lower training index.
    """
    x = np.atleast_2d(x)
    out = np.empty(x.shape[0])
    order_idx = np.arange(model.train_y.size)
    for row, q in enumerate(x):
        dist = np.linalg.norm(model.train_x - q, axis=1)
        nearest = np.lexsort((order_idx, dist))[: model.k]
        out[row] = float(np.mean(model.train_y[nearest] > 0))
    return out


# ---------------------------------------------------------------------------
# unified model wrapper

@dataclass(eq=False)
class AuthModel:
    """One trained per-user authenticator with its fixed decision threshold."""

    target: str
    kind: str
    payload: SvmModel | LogisticModel | KnnModel
    params: dict
    decision_threshold: float
    cv_report: tuple[tuple[tuple[tuple[str, float], ...], float], ...] = field(default_factory=tuple)


def score(model: AuthModel, values: np.ndarray) -> np.ndarray:
    """Higher score = more likely genuine.  Deterministic for fixed inputs."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    expected = _payload_dim(model.payload)
    if expected is not None and values.shape[1] != expected:
        raise ValueError(f"feature dimension {values.shape[1]} does not match model ({expected})")
    if model.kind == "svm":
        return svm_decision(model.payload, values)
    if model.kind == "logistic":
        return logistic_probability(model.payload, values)
    if model.kind == "knn":
        return knn_score(model.payload, values)
    raise ValueError(f"unknown classifier kind {model.kind!r}")


def score_one(model: AuthModel, vector: FeatureVector) -> float:
    return float(score(model, vector.values[None, :])[0])


def _payload_dim(payload) -> int | None:
    if isinstance(payload, SvmModel):
        # a model without support vectors scores everything at its bias
        return payload.support_vectors.shape[1] if payload.support_vectors.shape[0] else None
    if isinstance(payload, LogisticModel):
        return payload.weights.size
    return payload.train_x.shape[1]


def natural_threshold(kind: str) -> float:
    """Score cut used for fold accuracy before any threshold is fitted."""
    return 0.0 if kind == "svm" else 0.5


def _train_payload(data: LabeledSet, kind: str, params: dict):
    if kind == "svm":
        return train_svm(data, params["c"], params["gamma"])
    if kind == "logistic":
        return train_logistic(data, params["l2"])
    if kind == "knn":
        return train_knn(data, min(params["k"], len(data)))
    raise ValueError(f"unknown classifier kind {kind!r}")


def _payload_scores(payload, kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "svm":
        return svm_decision(payload, x)
    if kind == "logistic":
        return logistic_probability(payload, x)
    return knn_score(payload, x)


# ---------------------------------------------------------------------------
# cross-validation and threshold fitting

def stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per sample; each fold gets both classes or a ValueError is raised."""
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    if n_pos < folds or n_neg < folds:
        raise ValueError(
            f"infeasible stratification: {folds} folds need at least {folds} samples "
            f"per class, got {n_pos} genuine and {n_neg} impostor"
        )
    fold_of = np.empty(y.size, dtype=np.int64)
    for mask in (y > 0, y < 0):
        idx = np.nonzero(mask)[0]
        perm = rng.permutation(idx.size)
        fold_of[idx[perm]] = np.arange(idx.size) % folds
    return fold_of


def balanced_accuracy(y_true: np.ndarray, predicted_positive: np.ndarray) -> float:
    pos = y_true > 0
    tpr = float(predicted_positive[pos].mean())
    tnr = float((~predicted_positive[~pos]).mean())
    return 0.5 * (tpr + tnr)


def _tie_key(kind: str, params: dict) -> tuple:
    # prefer the simpler model: smaller C, smaller gamma / larger l2 / larger k
    if kind == "svm":
        return (params["c"], params["gamma"])
    if kind == "logistic":
        return (-params["l2"],)
    return (-params["k"],)


def cross_validate(
    data: LabeledSet,
    grid: HyperGrid,
    kind: str,
    seed: int = 0,
) -> tuple[dict, tuple]:
    """Pick the candidate with the best mean validation balanced accuracy.

    Folds are stratified and deterministic given the seed.  Ties go to the
    simpler model.  A singleton grid is chosen immediately without folding.
    """
    candidates = grid.candidates(kind)
    if len(candidates) == 1:
        report = ((tuple(sorted(candidates[0].items())), float("nan")),)
        return candidates[0], report
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    fold_of = stratified_folds(data.y, grid.folds, rng)
    cut = natural_threshold(kind)
    results = []
    for params in candidates:
        fold_scores = []
        for f in range(grid.folds):
            train_rows = np.nonzero(fold_of != f)[0]
            val_rows = np.nonzero(fold_of == f)[0]
            payload = _train_payload(data.subset(train_rows), kind, params)
            val_scores = _payload_scores(payload, kind, data.x[val_rows])
            fold_scores.append(balanced_accuracy(data.y[val_rows], val_scores >= cut))
        results.append((params, float(np.mean(fold_scores))))
    best = min(results, key=lambda item: (-item[1],) + _tie_key(kind, item[0]))
    report = tuple((tuple(sorted(p.items())), s) for p, s in results)
    return best[0], report


def fit_threshold(genuine_scores: np.ndarray, impostor_scores: np.ndarray) -> float:
    """Decision threshold at the equal-error point of the training scores."""
    _, threshold = compute_eer(ScoreSet(genuine=genuine_scores, impostor=impostor_scores))
    return threshold


def train_auth_model(
    data: LabeledSet,
    kind: str,
    grid: HyperGrid,
    seed: int = 0,
    params: dict | None = None,
) -> AuthModel:
    """Select hyperparameters (unless given), train on all data, fix the threshold."""
    if params is None:
        params, report = cross_validate(data, grid, kind, seed=seed)
    else:
        report = ()
    payload = _train_payload(data, kind, params)
    train_scores = _payload_scores(payload, kind, data.x)
    threshold = fit_threshold(train_scores[data.y > 0], train_scores[data.y < 0])
    return AuthModel(
        target=data.target,
        kind=kind,
        payload=payload,
        params=params,
        decision_threshold=threshold,
        cv_report=report,
    )


# ---------------------------------------------------------------------------
# text serialization

def write_auth_model(path: Path, model: AuthModel) -> None:
    lines = [
        "# auth model",
        f"target {model.target}",
        f"kind {model.kind}",
        "params " + " ".join(f"{k}={v!r}" for k, v in sorted(model.params.items())),
        f"threshold {model.decision_threshold!r}",
    ]
    for params, mean_score in model.cv_report:
        spec = " ".join(f"{k}={v!r}" for k, v in params)
        lines.append(f"cv {spec} score={mean_score!r}")
    payload = model.payload
    if model.kind == "svm":
        lines.append(f"bias {payload.bias!r}")
        lines.append(f"gamma {payload.gamma!r}")
        lines.append(f"c {payload.c!r}")
        lines.append(f"kkt_residual {payload.kkt_residual!r}")
        lines.append(f"iterations {payload.iterations}")
        for coef, vec in zip(payload.dual_coef, payload.support_vectors):
            lines.append("sv " + repr(float(coef)) + " " + " ".join(repr(float(v)) for v in vec))
    elif model.kind == "logistic":
        lines.append(f"bias {payload.bias!r}")
        lines.append(f"l2 {payload.l2!r}")
        lines.append("weights " + " ".join(repr(float(v)) for v in payload.weights))
    else:
        lines.append(f"k {payload.k}")
        for label, vec in zip(payload.train_y, payload.train_x):
            lines.append("point " + repr(float(label)) + " " + " ".join(repr(float(v)) for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_auth_model(path: Path) -> AuthModel:
    target = kind = None
    params: dict = {}
    threshold = 0.0
    scalars: dict[str, float] = {}
    sv_rows: list[tuple[float, list[float]]] = []
    weights: list[float] = []
    cv_entries: list[tuple[tuple[tuple[str, float], ...], float]] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "target":
            target = rest
        elif key == "kind":
            kind = rest
        elif key == "params":
            for token in rest.split():
                name, _, value = token.partition("=")
                params[name] = int(value) if name == "k" else float(value)
        elif key == "threshold":
            threshold = float(rest)
        elif key == "cv":
            tokens = rest.split()
            entry = []
            mean_score = float("nan")
            for token in tokens:
                name, _, value = token.partition("=")
                if name == "score":
                    mean_score = float(value)
                else:
                    entry.append((name, int(value) if name == "k" else float(value)))
            cv_entries.append((tuple(entry), mean_score))
        elif key in ("bias", "gamma", "c", "l2", "kkt_residual"):
            scalars[key] = float(rest)
        elif key in ("iterations", "k"):
            scalars[key] = int(rest)
        elif key == "weights":
            weights = [float(t) for t in rest.split()]
        elif key in ("sv", "point"):
            values = [float(t) for t in rest.split()]
            sv_rows.append((values[0], values[1:]))
    if target is None or kind is None:
        raise ValueError(f"{path}: missing target or kind")
    if kind == "svm":
        payload = SvmModel(
            support_vectors=np.asarray([r[1] for r in sv_rows]) if sv_rows else np.zeros((0, 0)),
            dual_coef=np.asarray([r[0] for r in sv_rows]),
            bias=scalars["bias"],
            gamma=scalars["gamma"],
            c=scalars["c"],
            kkt_residual=scalars.get("kkt_residual", 0.0),
            iterations=int(scalars.get("iterations", 0)),
        )
    elif kind == "logistic":
        payload = LogisticModel(
            weights=np.asarray(weights),
            bias=scalars["bias"],
            l2=scalars.get("l2", 0.0),
            grad_norm=0.0,
            iterations=0,
        )
    else:
        payload = KnnModel(
            train_x=np.asarray([r[1] for r in sv_rows]),
            train_y=np.asarray([r[0] for r in sv_rows]),
            k=int(scalars["k"]),
        )
    return AuthModel(
        target=target,
        kind=kind,
        payload=payload,
        params=params,
        decision_threshold=threshold,
        cv_report=tuple(cv_entries),
    )
