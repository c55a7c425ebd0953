"""One-vs-rest SVMs with linear and additive kernels.

Each binary subproblem is the L1-loss (hinge) SVM dual

    min_a  0.5 a^T Q a - sum(a)   s.t.  0 <= a_i <= C,
    Q_ij = y_i y_j (k(x_i, x_j) + 1),

solved by cyclic dual coordinate descent. The ``+ 1`` folds the bias in as an
extra constant feature, which removes the equality constraint of the usual
dual.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import DimensionError, DomainError, FormatError, ValidationError

KERNELS = ("linear", "intersection", "chi2", "jensen_shannon")
NONNEGATIVE_KERNELS = ("chi2", "jensen_shannon")
C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


def _check_kernel(kind):
    if kind not in KERNELS:
        raise ValidationError(f"unknown kernel {kind!r}; choose from {', '.join(KERNELS)}")


def _check_domain(kind, *arrays):
    if kind in NONNEGATIVE_KERNELS:
        for a in arrays:
            if np.any(a < 0):
                raise DomainError(f"{kind} kernel requires non-negative features")


def _chi2_terms(x, y):
    s = x + y
    with np.errstate(divide="ignore", invalid="ignore"):
        t = 2.0 * x * y / s
    return np.where(s > 0, t, 0.0)


def _js_terms(x, y):
    s = x + y
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(x > 0, 0.5 * x * np.log2(s / x), 0.0)
        ty = np.where(y > 0, 0.5 * y * np.log2(s / y), 0.0)
    return tx + ty


_TERMS = {
    "linear": lambda x, y: x * y,
    "intersection": np.minimum,
    "chi2": _chi2_terms,
    "jensen_shannon": _js_terms,
}


def kernel_eval(kind, x, y):
    _check_kernel(kind)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"kernel arguments differ in length: {x.shape} vs {y.shape}")
    _check_domain(kind, x, y)
    return float(np.sum(_TERMS[kind](x, y)))


def gram_matrix(kind, X, Y=None):
    """Kernel matrix between the rows of ``X`` and ``Y`` (``X`` itself by default)."""
    _check_kernel(kind)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"feature lengths differ: {X.shape[1]} vs {Y.shape[1]}")
    _check_domain(kind, X, Y)
    if kind == "linear":
        return X @ Y.T
    terms = _TERMS[kind]
    K = np.zeros((X.shape[0], Y.shape[0]))
    # one feature dimension at a time keeps memory at n x m
    for d in range(X.shape[1]):
        K += terms(X[:, d][:, None], Y[:, d][None, :])
    return K


@numba.njit(cache=True)
def _dual_cd(Q, C, tol, max_passes):
    n = Q.shape[0]
    alpha = np.zeros(n)
    Qa = np.zeros(n)
    objectives = np.zeros(max_passes)
    violation = np.inf
    passes = 0
    for p in range(max_passes):
        violation = 0.0
        for i in range(n):
            g = Qa[i] - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            if abs(pg) > violation:
                violation = abs(pg)
            if pg != 0.0:
                new = min(max(a - g / Q[i, i], 0.0), C)
                d = new - a
                if d != 0.0:
                    alpha[i] = new
                    for j in range(n):
                        Qa[j] += d * Q[j, i]
        obj = 0.0
        for i in range(n):
            obj += 0.5 * alpha[i] * Qa[i] - alpha[i]
        objectives[p] = obj
        passes = p + 1
        if violation < tol:
            break
    return alpha, objectives[:passes], violation


def solve_binary_dual(K, y, C=1.0, tol=1e-4, max_passes=10000):
    """Dual coordinate descent for one binary problem with bias-augmented kernel ``K``.

    Returns ``(alpha, objective_per_pass, final_violation)``.
    """
    y = np.asarray(y, dtype=np.float64)
    Q = np.ascontiguousarray((K + 1.0) * np.outer(y, y))
    return _dual_cd(Q, float(C), float(tol), int(max_passes))


def dual_objective(K, y, alpha):
    y = np.asarray(y, dtype=np.float64)
    Q = (K + 1.0) * np.outer(y, y)
    return 0.5 * alpha @ Q @ alpha - alpha.sum()


@dataclass
class SvmModel:
    kernel: str
    num_classes: int
    dim: int
    C: float
    bias: np.ndarray
    weights: np.ndarray = None          # linear: (M, dim)
    support_vectors: np.ndarray = None  # kernelized: (n_sv, dim)
    dual_coef: np.ndarray = None        # kernelized: (M, n_sv), entries alpha_i * y_i
    meta: dict = field(default_factory=dict)

    def decision_values(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionError(f"feature length {X.shape[1]} does not match model dimension {self.dim}")
        if not np.isfinite(X).all():
            raise ValidationError("features must be finite")
        _check_domain(self.kernel, X)
        if self.kernel == "linear":
            return X @ self.weights.T + self.bias
        K = gram_matrix(self.kernel, X, self.support_vectors)
        return K @ self.dual_coef.T + self.bias


def _as_training_set(features, labels):
    X = np.array([np.asarray(f, dtype=np.float64) for f in features])
    if X.ndim != 2:
        raise DimensionError("all feature vectors must have the same length")
    if not np.isfinite(X).all():
        raise ValidationError("training features must be finite")
    y = np.asarray(labels, dtype=int)
    if y.shape != (X.shape[0],):
        raise DimensionError("need exactly one label per feature vector")
    if y.min() < 0:
        raise ValidationError("class ids must be non-negative")
    if len(np.unique(y)) < 2:
        raise ValidationError("training needs at least two distinct classes")
    return X, y


def train_svm(features, labels, kernel="linear", C=1.0, tol=1e-4, max_passes=10000, num_classes=None):
    """Train a one-vs-rest SVM; class ids are ``0 .. num_classes-1``."""
    _check_kernel(kernel)
    if C <= 0:
        raise ValidationError("C must be positive")
    X, y = _as_training_set(features, labels)
    _check_domain(kernel, X)
    M = int(num_classes if num_classes is not None else y.max() + 1)
    if y.max() >= M:
        raise ValidationError(f"label {y.max()} out of range for {M} classes")
    K = gram_matrix(kernel, X)
    alphas = np.zeros((M, X.shape[0]))
    meta = {"passes": [], "violation": [], "objectives": []}
    for m in range(M):
        ym = np.where(y == m, 1.0, -1.0)
        alpha, objectives, violation = solve_binary_dual(K, ym, C, tol, max_passes)
        alphas[m] = alpha * ym
        meta["passes"].append(len(objectives))
        meta["violation"].append(float(violation))
        meta["objectives"].append(objectives)
    bias = alphas.sum(axis=1)
    if kernel == "linear":
        return SvmModel(kernel, M, X.shape[1], float(C), bias, weights=alphas @ X, meta=meta)
    support = np.flatnonzero(np.any(alphas != 0.0, axis=0))
    return SvmModel(kernel, M, X.shape[1], float(C), bias,
                    support_vectors=X[support], dual_coef=alphas[:, support], meta=meta)


def predict(model, feature):
    """``(class_id, decision_values)``; ties go to the lowest class id."""
    values = model.decision_values(np.asarray(feature, dtype=np.float64)[None, :])[0]
    return int(np.argmax(values)), values


def predict_many(model, features):
    return np.argmax(model.decision_values(features), axis=1)


def select_C(features, labels, kernel, grid=C_GRID, folds=5, seed=0, tol=1e-4):
    """Pick C from ``grid`` by k-fold cross-validated accuracy (first best wins)."""
    X, y = _as_training_set(features, labels)
    M = int(y.max() + 1)
    order = np.random.default_rng(seed).permutation(len(y))
    chunks = np.array_split(order, folds)
    best_C, best_acc = grid[0], -1.0
    for C in grid:
        correct = 0
        for k in range(folds):
            test = chunks[k]
            train = np.concatenate([chunks[j] for j in range(folds) if j != k])
            if len(np.unique(y[train])) < 2:
                continue
            model = train_svm(X[train], y[train], kernel, C, tol, num_classes=M)
            correct += int(np.sum(predict_many(model, X[test]) == y[test]))
        acc = correct / len(y)
        if acc > best_acc:
            best_C, best_acc = C, acc
    return best_C


# --- text format ------------------------------------------------------------

def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


def save_model(model, path):
    lines = [f"PXSVM 1 {model.kernel} {model.num_classes} {model.dim} {float(model.C)!r}"]
    if model.kernel == "linear":
        for m in range(model.num_classes):
            lines.append(_fmt([model.bias[m], *model.weights[m]]))
    else:
        for m in range(model.num_classes):
            nz = np.flatnonzero(model.dual_coef[m])
            lines.append(f"{float(model.bias[m])!r} {len(nz)}")
            lines.extend(f"{i} {float(model.dual_coef[m, i])!r}" for i in nz)
        lines.append(f"SV {len(model.support_vectors)}")
        lines.extend(f"{i} {_fmt(sv)}" for i, sv in enumerate(model.support_vectors))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"model file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    try:
        magic, version, kernel, M, dim, C = lines[0].split()
        if magic != "PXSVM" or version != "1":
            raise FormatError(f"{path}: not a PXSVM version 1 file")
        _check_kernel(kernel)
        M, dim, C = int(M), int(dim), float(C)
        body = iter(lines[1:])
        if kernel == "linear":
            rows = np.array([[float(v) for v in next(body).split()] for _ in range(M)])
            if rows.shape != (M, dim + 1):
                raise FormatError(f"{path}: expected {M} rows of {dim + 1} values")
            return SvmModel(kernel, M, dim, C, rows[:, 0].copy(), weights=rows[:, 1:].copy())
        bias = np.zeros(M)
        entries = []
        for m in range(M):
            b, count = next(body).split()
            bias[m] = float(b)
            for _ in range(int(count)):
                i, coef = next(body).split()
                entries.append((m, int(i), float(coef)))
        tag, n_sv = next(body).split()
        if tag != "SV":
            raise FormatError(f"{path}: missing support-vector block")
        n_sv = int(n_sv)
        sv = np.zeros((n_sv, dim))
        for _ in range(n_sv):
            parts = next(body).split()
            if len(parts) != dim + 1:
                raise FormatError(f"{path}: support vector row has {len(parts) - 1} values, expected {dim}")
            sv[int(parts[0])] = [float(v) for v in parts[1:]]
        coef = np.zeros((M, n_sv))
        for m, i, c in entries:
            coef[m, i] = c
        return SvmModel(kernel, M, dim, C, bias, support_vectors=sv, dual_coef=coef)
    except FormatError:
        raise
    except (ValueError, IndexError, StopIteration) as exc:
        raise FormatError(f"{path}: malformed or truncated model ({exc!r})") from None
