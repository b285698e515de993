"""Epsilon-insensitive support vector regression trained by sequential
minimal optimization, plus grid search and recursive feature elimination.

The dual problem is solved over beta_i = alpha_i - alpha_i* with the
constraints sum(beta) = 0 and |beta_i| <= C. Pairs (i, j) are optimized
analytically: the one-dimensional subproblem is piecewise quadratic with
breakpoints where beta_i or beta_j changes sign.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class SvrError(Exception):
    """Invalid SVR input or configuration."""


class ConvergenceError(SvrError):
    """SMO failed to satisfy the KKT conditions within max_passes."""


@dataclass(frozen=True, slots=True)
class Kernel:
    kind: str  # "rbf" | "linear"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise SvrError(f"unknown kernel kind: {self.kind}")
        if self.kind == "rbf" and not (np.isfinite(self.gamma) and self.gamma > 0):
            raise SvrError("rbf gamma must be finite and positive")

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        if self.kind == "linear":
            return a @ b.T
        sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-self.gamma * sq)


def linear_kernel() -> Kernel:
    return Kernel("linear")


def rbf_kernel(gamma: float) -> Kernel:
    return Kernel("rbf", gamma)


@dataclass(frozen=True, slots=True)
class SvrParams:
    C: float = 1.0
    epsilon: float = 0.1
    tolerance: float = 1e-3
    max_passes: int = 400

    def __post_init__(self):
        if self.C <= 0 or self.epsilon < 0 or self.tolerance <= 0:
            raise SvrError("require C > 0, epsilon >= 0, tolerance > 0")


@dataclass(slots=True)
class SvrModel:
    support_vectors: np.ndarray  # (m, d)
    dual_coefs: np.ndarray       # (m,), beta_i = alpha_i - alpha_i*
    bias: float
    kernel: Kernel

    @property
    def weights(self) -> np.ndarray:
        """Primal weight vector; linear kernel only."""
        if self.kernel.kind != "linear":
            raise SvrError("primal weights exist only for the linear kernel")
        if len(self.dual_coefs) == 0:
            return np.zeros(self.support_vectors.shape[1] if self.support_vectors.size else 0)
        return self.dual_coefs @ self.support_vectors


def dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray,
                   epsilon: float) -> float:
    return float(-0.5 * beta @ K @ beta + y @ beta - epsilon * np.abs(beta).sum())


def _estimate_bias(beta: np.ndarray, resid: np.ndarray, C: float,
                   epsilon: float) -> float:
    """resid = y - K beta (no bias). Free SVs pin b; else use the KKT interval."""
    edge = 1e-8 * C
    free = (np.abs(beta) > edge) & (np.abs(beta) < C - edge)
    if free.any():
        return float(np.mean(resid[free] - epsilon * np.sign(beta[free])))
    lo, hi = -np.inf, np.inf
    for i in range(len(beta)):
        if abs(beta[i]) <= edge:
            lo = max(lo, resid[i] - epsilon)
            hi = min(hi, resid[i] + epsilon)
        elif beta[i] >= C - edge:
            hi = min(hi, resid[i] - epsilon)
        else:  # beta_i == -C
            lo = max(lo, resid[i] + epsilon)
    if not np.isfinite(lo) and not np.isfinite(hi):
        return 0.0
    if not np.isfinite(lo):
        return float(hi)
    if not np.isfinite(hi):
        return float(lo)
    return float((lo + hi) / 2.0)


def kkt_violation(beta: np.ndarray, resid: np.ndarray, bias: float, C: float,
                  epsilon: float) -> float:
    """Largest violation of the epsilon-tube KKT conditions (0 = optimal)."""
    r = resid - bias
    edge = 1e-8 * C
    viol = np.zeros(len(beta))
    for i in range(len(beta)):
        b_i = beta[i]
        if abs(b_i) <= edge:
            viol[i] = max(0.0, abs(r[i]) - epsilon)
        elif b_i >= C - edge:
            viol[i] = max(0.0, epsilon - r[i])
        elif b_i <= -C + edge:
            viol[i] = max(0.0, r[i] + epsilon)
        elif b_i > 0:
            viol[i] = abs(r[i] - epsilon)
        else:
            viol[i] = abs(r[i] + epsilon)
    return float(viol.max(initial=0.0))


def _pair_step(i: int, j: int, beta: np.ndarray, f: np.ndarray, K: np.ndarray,
               y: np.ndarray, C: float, epsilon: float) -> float:
    """Best feasible step t for beta_i += t, beta_j -= t; returns the gain."""
    eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
    d = (y[i] - f[i]) - (y[j] - f[j])
    lo = max(-C - beta[i], beta[j] - C)
    hi = min(C - beta[i], beta[j] + C)
    if hi <= lo:
        return 0.0

    def gain(t: float) -> float:
        return (
            -0.5 * eta * t * t + d * t
            - epsilon * (abs(beta[i] + t) - abs(beta[i]))
            - epsilon * (abs(beta[j] - t) - abs(beta[j]))
        )

    candidates = [lo, hi]
    for bp in (-beta[i], beta[j]):
        if lo < bp < hi:
            candidates.append(bp)
    if eta > 0:
        for s1 in (-1.0, 1.0):
            for s2 in (-1.0, 1.0):
                t = (d - epsilon * s1 + epsilon * s2) / eta
                if lo <= t <= hi:
                    candidates.append(t)
    best_t, best_gain = 0.0, 0.0
    for t in candidates:
        g = gain(t)
        if g > best_gain:
            best_t, best_gain = t, g
    if best_gain <= 1e-14:
        return 0.0
    beta[i] += best_t
    beta[j] -= best_t
    f += best_t * (K[:, i] - K[:, j])
    return best_gain


def _best_partner(i: int, beta: np.ndarray, f: np.ndarray, K: np.ndarray,
                  diag: np.ndarray, y: np.ndarray, C: float,
                  epsilon: float) -> tuple[int, float, float]:
    """Exact steepest pair for fixed i: the (j, t) maximizing the gain of
    beta_i += t, beta_j -= t over all j, evaluated vectorized."""
    n = len(beta)
    e = y - f
    eta = diag[i] + diag - 2.0 * K[i]
    d = e[i] - e
    lo = np.maximum(-C - beta[i], beta - C)
    hi = np.minimum(C - beta[i], beta + C)

    # candidate steps per j: box edges, the two eps-kinks, and the four
    # smooth stationary points (one per sign combination of the kinks)
    cand = np.empty((8, n))
    cand[0] = lo
    cand[1] = hi
    cand[2] = -beta[i]
    cand[3] = beta
    safe_eta = np.where(eta > 1e-12, eta, np.inf)
    row = 4
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            cand[row] = (d - epsilon * s1 + epsilon * s2) / safe_eta
            row += 1
    np.clip(cand, lo, hi, out=cand)

    gains = (
        -0.5 * eta * cand * cand + d * cand
        - epsilon * (np.abs(beta[i] + cand) - abs(beta[i]))
        - epsilon * (np.abs(beta - cand) - np.abs(beta))
    )
    gains[:, hi <= lo] = -np.inf
    gains[:, i] = -np.inf
    flat = int(np.argmax(gains))
    j = flat % n
    t = float(cand[flat // n, j])
    return j, t, float(gains[flat // n, j])


def _active_set_refine(beta: np.ndarray, f: np.ndarray, K: np.ndarray,
                       y: np.ndarray, C: float, epsilon: float) -> bool:
    """Projected Newton step over the free support vectors.

    Within a region where no beta_i crosses zero or the box, the dual is a
    smooth concave quadratic; jumping toward its constrained maximizer (sum
    of free betas held fixed) removes the zigzag of pure pairwise ascent.
    Returns True if the objective improved.
    """
    edge = 1e-10 * max(1.0, C)
    free = np.where((np.abs(beta) > edge) & (np.abs(beta) < C - edge))[0]
    m = len(free)
    if m < 2:
        return False
    s = np.sign(beta[free])
    KFF = K[np.ix_(free, free)]
    # K_FB beta_B = f_F - K_FF beta_F
    grad_const = y[free] - epsilon * s - (f[free] - KFF @ beta[free])
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = KFF + 1e-10 * np.eye(m)
    A[:m, m] = 1.0
    A[m, :m] = 1.0
    b = np.empty(m + 1)
    b[:m] = grad_const
    b[m] = beta[free].sum()
    try:
        target = np.linalg.solve(A, b)[:m]
    except np.linalg.LinAlgError:
        target = np.linalg.lstsq(A, b, rcond=None)[0][:m]
    delta = target - beta[free]
    if not np.isfinite(delta).all() or np.abs(delta).max() <= 1e-14:
        return False
    # longest step in (0, 1] that keeps every free beta inside the box and
    # on its side of the eps kink at zero
    cur = beta[free]
    with np.errstate(divide="ignore", invalid="ignore"):
        lim_hi = np.where(delta > 0, (C - cur) / delta, np.inf)
        lim_lo = np.where(delta < 0, (-C - cur) / delta, np.inf)
        lim_zero = np.where((cur > 0) == (delta < 0), -cur / delta, np.inf)
        lim_zero = np.where(delta == 0, np.inf, lim_zero)
    alpha = min(1.0, float(np.min([lim_hi.min(), lim_lo.min(), lim_zero.min()])))
    if alpha <= 1e-14:
        return False
    trial = beta.copy()
    trial[free] += alpha * delta
    if dual_objective(K, y, trial, epsilon) <= dual_objective(K, y, beta, epsilon):
        return False
    beta[free] = trial[free]
    f[:] = K @ beta
    return True


def train_svr(
    X: np.ndarray,
    y: np.ndarray,
    params: SvrParams = SvrParams(),
    kernel: Kernel = Kernel("rbf", 1.0),
) -> SvrModel:
    """Fit the SVR dual by pairwise coordinate ascent to KKT tolerance."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != len(y) or len(y) < 1:
        raise SvrError(f"X has {X.shape[0]} rows but y has {len(y)} targets")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise SvrError("non-finite training data")

    n = len(y)
    K = kernel.gram(X, X)
    beta = np.zeros(n)
    f = np.zeros(n)
    C, epsilon = params.C, params.epsilon
    edge = 1e-12 * max(1.0, C)

    diag = np.diag(K).copy()
    converged = False
    for _ in range(params.max_passes):
        # one pass = up to n working-set steps
        stalled = False
        for _ in range(n):
            e = y - f
            # directional derivatives of the dual for beta_i moving up/down;
            # the subgradient of -eps|beta_i| flips sign at zero
            up = e - epsilon * np.where(beta >= 0.0, 1.0, -1.0)
            dn = -e + epsilon * np.where(beta > 0.0, 1.0, -1.0)
            up[beta >= C - edge] = -np.inf
            dn[beta <= -C + edge] = -np.inf
            gap = np.max(up) + np.max(dn)
            if gap <= params.tolerance:
                converged = True
                break
            # anchor on the worst violator in either direction, then take
            # the exact best partner and step size for it
            i = int(np.argmax(np.maximum(up, dn)))
            j, t, g = _best_partner(i, beta, f, K, diag, y, C, epsilon)
            if g <= 1e-14:
                stalled = True
                break
            beta[i] += t
            beta[j] -= t
            f += t * (K[:, i] - K[:, j])
        if converged:
            break
        for _ in range(5):
            if not _active_set_refine(beta, f, K, y, C, epsilon):
                break
        if stalled:
            # pair selection stalled numerically: exhaustive scan either
            # finds a productive pair or certifies nothing is left to gain
            improved = 0.0
            for i in range(n):
                for j in range(i + 1, n):
                    improved += _pair_step(i, j, beta, f, K, y, C, epsilon)
            if improved <= 1e-12:
                break
    if not converged:
        # passes ran out or the scan went quiet; the KKT check below decides
        bias = _estimate_bias(beta, y - f, C, epsilon)
        if kkt_violation(beta, y - f, bias, C, epsilon) > params.tolerance:
            raise ConvergenceError(
                f"SMO did not converge within {params.max_passes} passes"
            )

    bias = _estimate_bias(beta, y - f, C, epsilon)
    if kkt_violation(beta, y - f, bias, C, epsilon) > params.tolerance:
        raise ConvergenceError("KKT conditions not met at termination")
    keep = np.abs(beta) > 1e-12
    return SvrModel(
        support_vectors=X[keep].copy(),
        dual_coefs=beta[keep].copy(),
        bias=bias,
        kernel=kernel,
    )


def predict(model: SvrModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise SvrError("predict takes a single 1-D sample; use predict_many")
    return float(predict_many(model, x[None, :])[0])


def predict_many(model: SvrModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(model.dual_coefs) == 0:
        return np.full(X.shape[0], model.bias)
    if X.shape[1] != model.support_vectors.shape[1]:
        raise SvrError(
            f"query dimension {X.shape[1]} != training dimension "
            f"{model.support_vectors.shape[1]}"
        )
    return model.kernel.gram(X, model.support_vectors) @ model.dual_coefs + model.bias


def _r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    ss_res = float(((y_true - y_pred) ** 2).sum())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise SvrError("R^2 undefined: zero-variance targets")
    return 1.0 - ss_res / ss_tot


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    if k < 2 or n < k:
        raise SvrError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i in range(k):
        test = folds[i]
        train = np.concatenate([folds[j] for j in range(k) if j != i])
        out.append((train, test))
    return out


def cv_r2(X: np.ndarray, y: np.ndarray, params: SvrParams, kernel: Kernel,
          k: int, seed: int) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    scores = []
    for train_idx, test_idx in kfold_indices(len(y), k, seed):
        model = train_svr(X[train_idx], y[train_idx], params, kernel)
        scores.append(_r2(y[test_idx], predict_many(model, X[test_idx])))
    return float(np.mean(scores))


@dataclass(frozen=True, slots=True)
class GridSearchResult:
    best: SvrParams
    best_kernel: Kernel
    scores: dict  # (C, gamma) -> mean CV R^2


def grid_search(
    X: np.ndarray,
    y: np.ndarray,
    c_grid: Sequence[float],
    gamma_grid: Sequence[float] | None = None,
    k: int = 5,
    seed: int = 0,
    epsilon: float = 0.1,
    kernel_kind: str = "rbf",
) -> GridSearchResult:
    """Pick (C, gamma) maximizing mean k-fold CV R^2.

    Ties break toward smaller C, then smaller gamma. A linear kernel uses
    gamma_grid = [None].
    """
    if not c_grid:
        raise SvrError("empty C grid")
    if kernel_kind == "rbf":
        gammas: Sequence = gamma_grid if gamma_grid is not None else DEFAULT_GAMMA_GRID
        if not gammas:
            raise SvrError("empty gamma grid for rbf kernel")
    else:
        gammas = [None]
    scores = {}
    best_cell = None
    best_score = -np.inf
    for C in sorted(c_grid):
        for gamma in (sorted(gammas) if kernel_kind == "rbf" else [None]):
            kernel = Kernel("rbf", gamma) if gamma is not None else linear_kernel()
            params = SvrParams(C=C, epsilon=epsilon)
            score = cv_r2(X, y, params, kernel, k, seed)
            scores[(C, gamma)] = score
            if score > best_score:
                best_score = score
                best_cell = (params, kernel)
    return GridSearchResult(best=best_cell[0], best_kernel=best_cell[1], scores=scores)


DEFAULT_C_GRID = [2.0**p for p in range(-5, 16, 2)]
DEFAULT_GAMMA_GRID = [2.0**p for p in range(-15, 4, 2)]


@dataclass(frozen=True, slots=True)
class RfeResult:
    elimination_order: tuple[int, ...]  # first-removed first
    best_size: int
    best_features: tuple[int, ...]
    subset_scores: dict  # size -> mean CV R^2


def rfe(
    X: np.ndarray,
    y: np.ndarray,
    params: SvrParams,
    k: int = 5,
    seed: int = 0,
) -> RfeResult:
    """Linear-SVR recursive feature elimination over subset sizes 1..D."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    d = X.shape[1]
    if d < 1:
        raise SvrError("rfe needs at least one feature")

    surviving = list(range(d))
    eliminated: list[int] = []
    while len(surviving) > 1:
        model = train_svr(X[:, surviving], y, params, linear_kernel())
        w = np.abs(model.weights)
        drop_local = int(np.argmin(w))  # argmin takes the lowest index on ties
        eliminated.append(surviving.pop(drop_local))

    # subset of size s = the s features that survived longest
    order = eliminated + surviving  # elimination order; last entry = most important
    subset_scores = {}
    best_size, best_score = None, -np.inf
    for size in range(1, d + 1):
        feats = sorted(order[d - size:])
        score = cv_r2(X[:, feats], y, params, linear_kernel(), k, seed) if d > 1 else \
            cv_r2(X, y, params, linear_kernel(), k, seed)
        subset_scores[size] = score
        if score > best_score + 1e-12:
            best_size, best_score = size, score
    best_features = tuple(sorted(order[d - best_size:]))
    return RfeResult(
        elimination_order=tuple(eliminated),
        best_size=best_size,
        best_features=best_features,
        subset_scores=subset_scores,
    )


SVR_MAGIC = b"SVR1"
_KERNEL_CODES = {"rbf": 0, "linear": 1}


def save_model(model: SvrModel, path: str | Path) -> None:
    m, d = (model.support_vectors.shape if model.support_vectors.size
            else (0, 0))
    with open(path, "wb") as fh:
        fh.write(SVR_MAGIC)
        fh.write(struct.pack("<Bd", _KERNEL_CODES[model.kernel.kind], model.kernel.gamma))
        fh.write(struct.pack("<d", model.bias))
        fh.write(struct.pack("<II", m, d))
        fh.write(model.dual_coefs.astype("<f8").tobytes())
        fh.write(model.support_vectors.astype("<f8").tobytes())


def load_model(path: str | Path) -> SvrModel:
    raw = Path(path).read_bytes()
    if raw[:4] != SVR_MAGIC:
        raise SvrError(f"bad model magic in {path}")
    code, gamma = struct.unpack_from("<Bd", raw, 4)
    (bias,) = struct.unpack_from("<d", raw, 13)
    m, d = struct.unpack_from("<II", raw, 21)
    off = 29
    coefs = np.frombuffer(raw, dtype="<f8", count=m, offset=off).copy()
    off += 8 * m
    vecs = np.frombuffer(raw, dtype="<f8", count=m * d, offset=off).reshape(m, d).copy()
    kind = {v: k for k, v in _KERNEL_CODES.items()}[code]
    kernel = Kernel(kind, gamma) if kind == "rbf" else linear_kernel()
    return SvrModel(support_vectors=vecs, dual_coefs=coefs, bias=bias, kernel=kernel)
