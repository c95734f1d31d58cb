"""Exact O(N^2) t-SNE producing the low-dimensional map used for training.

Gaussian conditional affinities are calibrated per row by bisection on the
kernel precision until each row's perplexity matches the target. The map is
optimized by momentum gradient descent on KL(P||Q) with a degree-1 Student-t
low-dimensional kernel, early exaggeration, and adaptive per-parameter gains.
Runs are bit-reproducible for a fixed seed: per-row gradient accumulation is
sequential in ascending neighbor index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .data import child_seed, matrix_from_csv, matrix_to_csv
from .errors import DataError, DivergenceError

Q_FLOOR = 1e-12
PERPLEXITY_TOL = 1e-5
MAX_BISECTION_STEPS = 50


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration_factor: float = 12.0
    exaggeration_iters: int = 250
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch_iter: int = 250
    init_scale: float = 1e-4
    n_components: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 0:
            raise DataError("perplexity must be positive")
        if self.iterations < 250:
            raise DataError("need at least 250 iterations")
        if self.learning_rate <= 0 or self.early_exaggeration_factor <= 0:
            raise DataError("learning rate and exaggeration must be positive")
        if self.n_components < 1:
            raise DataError("n_components must be >= 1")


@dataclass
class EmbeddingMeta:
    perplexity: float
    iterations: int
    rng_seed: int
    final_kl: float
    initial_kl: float


@dataclass
class Embedding:
    """Id-aligned low-dimensional coordinates of a user base."""

    ids: np.ndarray
    coords: np.ndarray
    meta: EmbeddingMeta | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] < 1:
            raise DataError("coords must be an N x e matrix with e >= 1")
        if self.ids.shape != (self.coords.shape[0],):
            raise DataError("ids and coordinate rows are misaligned")
        if not np.all(np.isfinite(self.coords)):
            raise DataError("coords contain non-finite values")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def n_components(self) -> int:
        return self.coords.shape[1]

    def rows_for(self, ids) -> np.ndarray:
        """Map user ids to row indices; raises if any id is unknown."""
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(self.ids, kind="stable")
        pos = np.searchsorted(self.ids, ids, sorter=order)
        pos = np.clip(pos, 0, len(order) - 1)
        rows = order[pos]
        bad = self.ids[rows] != ids
        if np.any(bad):
            missing = np.unique(ids[bad])[:10]
            raise DataError(f"ids not present in embedding: {missing.tolist()}")
        return rows


def squared_distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    b = a if b is None else b
    aa = np.einsum("ij,ij->i", a, a)
    bb = aa if b is a else np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _calibrate_row(d2_row: np.ndarray, target: float):
    """Find the Gaussian precision whose row perplexity matches the target.

    Returns (normalized probabilities over the row, beta). Distances are
    shifted by their minimum before exponentiation so the largest entry
    never underflows.
    """
    shift = d2_row.min()
    d2s = d2_row - shift
    beta = 1.0
    beta_lo, beta_hi = 0.0, np.inf
    # Bracket the precision, doubling/halving until the target is straddled.
    for _ in range(200):
        p = np.exp(-d2s * beta)
        s = p.sum()
        entropy = np.log(s) + beta * (d2s @ p) / s
        perp = np.exp(entropy)
        if abs(perp - target) <= PERPLEXITY_TOL:
            return p / s, beta
        if perp > target:
            beta_lo = beta
            if np.isinf(beta_hi):
                beta *= 2.0
            else:
                break
        else:
            beta_hi = beta
            if beta_lo == 0.0:
                beta /= 2.0
            else:
                break
    for _ in range(MAX_BISECTION_STEPS):
        beta = (beta_lo + beta_hi) / 2.0 if np.isfinite(beta_hi) else beta_lo * 2.0
        p = np.exp(-d2s * beta)
        s = p.sum()
        entropy = np.log(s) + beta * (d2s @ p) / s
        perp = np.exp(entropy)
        if abs(perp - target) <= PERPLEXITY_TOL:
            break
        if perp > target:
            beta_lo = beta
        else:
            beta_hi = beta
    return p / s, beta


def conditional_affinities(X, perplexity: float, return_sigmas: bool = False):
    """Row-stochastic Gaussian conditional affinities with calibrated bandwidths.

    Row i is a distribution over j != i; its bandwidth is tuned so that
    2^(row entropy) matches the target perplexity within 1e-5. The diagonal
    is zero.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise DataError("need at least 3 points")
    if perplexity >= n:
        raise DataError(f"perplexity {perplexity} must be below N={n}")
    d2 = squared_distances(X)
    P = np.zeros((n, n))
    sigmas = np.empty(n)
    others = np.arange(n - 1)
    for i in range(n):
        row = np.delete(d2[i], i)
        if row.max() == 0.0:
            raise DataError(f"row {i} is degenerate: all neighbors at distance 0")
        p, beta = _calibrate_row(row, perplexity)
        cols = others + (others >= i)
        P[i, cols] = p
        sigmas[i] = np.sqrt(0.5 / beta)
    if return_sigmas:
        return P, sigmas
    return P


def row_perplexities(P: np.ndarray) -> np.ndarray:
    """2^(entropy) of each row of a row-stochastic matrix with zero diagonal."""
    out = np.empty(P.shape[0])
    for i, row in enumerate(P):
        p = row[row > 0]
        out[i] = np.exp(-(p @ np.log(p)))
    return out


def symmetrize(P_conditional: np.ndarray) -> np.ndarray:
    """Joint affinities (p_ij + p_ji) / 2N, floored off-diagonal at 1e-12."""
    n = P_conditional.shape[0]
    P = (P_conditional + P_conditional.T) / (2.0 * n)
    np.maximum(P, Q_FLOOR, out=P)
    np.fill_diagonal(P, 0.0)
    return P


def _student_t_q(coords: np.ndarray) -> np.ndarray:
    w = 1.0 / (1.0 + squared_distances(coords))
    np.fill_diagonal(w, 0.0)
    q = w / w.sum()
    np.maximum(q, Q_FLOOR, out=q)
    np.fill_diagonal(q, 0.0)
    return q


def kl_divergence(P: np.ndarray, coords: np.ndarray) -> float:
    """KL(P || Q) with Q the normalized degree-1 Student-t kernel of coords."""
    coords = np.asarray(coords, dtype=np.float64)
    Q = _student_t_q(coords)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


@njit(parallel=True, cache=True)
def _kernel_row_sums(Y, out):
    n = Y.shape[0]
    for i in prange(n):
        s = 0.0
        d0 = Y[i, 0]
        d1 = Y[i, 1]
        for j in range(n):
            if j == i:
                continue
            a = d0 - Y[j, 0]
            b = d1 - Y[j, 1]
            s += 1.0 / (1.0 + a * a + b * b)
        out[i] = s


@njit(parallel=True, cache=True)
def _kl_gradient_2d(Y, P, S, grad):
    n = Y.shape[0]
    for i in prange(n):
        y0 = Y[i, 0]
        y1 = Y[i, 1]
        g0 = 0.0
        g1 = 0.0
        for j in range(n):
            if j == i:
                continue
            a = y0 - Y[j, 0]
            b = y1 - Y[j, 1]
            w = 1.0 / (1.0 + a * a + b * b)
            q = w / S
            if q < Q_FLOOR:
                q = Q_FLOOR
            coef = (P[i, j] - q) * w
            g0 += coef * a
            g1 += coef * b
        grad[i, 0] = 4.0 * g0
        grad[i, 1] = 4.0 * g1


def _gradient_2d(Y, P, row_sums, grad):
    _kernel_row_sums(Y, row_sums)
    _kl_gradient_2d(Y, P, float(row_sums.sum()), grad)
    return grad


def _gradient_any(Y, P):
    w = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(w, 0.0)
    q = np.maximum(w / w.sum(), Q_FLOOR)
    np.fill_diagonal(q, 0.0)
    m = (P - q) * w
    return 4.0 * (m.sum(axis=1)[:, None] * Y - m @ Y)


def run_tsne(X, cfg: TsneConfig, ids=None, iterate_hook=None) -> Embedding:
    """Embed X by gradient descent on KL(P||Q); deterministic per rng_seed.

    iterate_hook, when given, is called as hook(iteration, coords) with the
    current coordinates after every update (and once at iteration 0 with the
    initial coordinates); coords must be treated as read-only.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 10:
        raise DataError("need at least 10 points to embed")
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids)

    P = symmetrize(conditional_affinities(X, cfg.perplexity))
    P_exagg = P * cfg.early_exaggeration_factor

    rng = np.random.default_rng(child_seed(cfg.rng_seed, "tsne_init"))
    Y = rng.normal(0.0, cfg.init_scale, size=(n, cfg.n_components))
    initial_kl = kl_divergence(P, Y)

    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    grad = np.empty_like(Y)
    row_sums = np.empty(n)
    fast_path = cfg.n_components == 2

    if iterate_hook is not None:
        iterate_hook(0, Y)
    for it in range(cfg.iterations):
        P_step = P_exagg if it < cfg.exaggeration_iters else P
        momentum = (
            cfg.initial_momentum
            if it < cfg.momentum_switch_iter
            else cfg.final_momentum
        )
        if fast_path:
            _gradient_2d(Y, P_step, row_sums, grad)
        else:
            grad = _gradient_any(Y, P_step)
        speed_up = velocity * grad < 0.0
        gains[speed_up] += 0.2
        gains[~speed_up] *= 0.8
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - cfg.learning_rate * (gains * grad)
        Y = Y + velocity
        if not np.all(np.isfinite(Y)):
            raise DivergenceError(f"non-finite coordinates at iteration {it}")
        Y -= Y.mean(axis=0)
        if iterate_hook is not None:
            iterate_hook(it + 1, Y)

    meta = EmbeddingMeta(
        perplexity=cfg.perplexity,
        iterations=cfg.iterations,
        rng_seed=cfg.rng_seed,
        final_kl=kl_divergence(P, Y),
        initial_kl=initial_kl,
    )
    return Embedding(ids=ids, coords=Y, meta=meta)


def _knn_sets(d2: np.ndarray, k: int):
    """Top-k neighbor sets per row; ties broken toward the smaller index."""
    n = d2.shape[0]
    sets = []
    for i in range(n):
        row = d2[i]
        kth = np.partition(row, k - 1)[k - 1]
        cand = np.flatnonzero(row <= kth)
        order = np.lexsort((cand, row[cand]))
        sets.append(set(cand[order[:k]].tolist()))
    return sets


def neighborhood_preservation(X, coords, k: int, chunk: int = 512) -> float:
    """Mean fraction of each point's k nearest neighbors kept by the embedding.

    Neighbors are by Euclidean distance with self excluded; distance ties
    break toward the smaller row index in both spaces.
    """
    X = np.asarray(X, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    n = X.shape[0]
    if coords.shape[0] != n:
        raise DataError("X and coords row counts differ")
    if not 1 <= k <= n - 1:
        raise DataError(f"k must be in [1, {n - 1}]")

    def knn(mat):
        sets = []
        sq = np.einsum("ij,ij->i", mat, mat)
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            block = sq[lo:hi, None] + sq[None, :] - 2.0 * (mat[lo:hi] @ mat.T)
            np.maximum(block, 0.0, out=block)
            block[np.arange(lo, hi) - lo, np.arange(lo, hi)] = np.inf
            sets.extend(_knn_sets(block, k))
        return sets

    high = knn(X)
    low = knn(coords)
    overlap = [len(a & b) / k for a, b in zip(high, low)]
    return float(np.mean(overlap))


def save_embedding(path, emb: Embedding, labels=None) -> None:
    """Persist coordinates as CSV plus a key=value sidecar with the meta."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(matrix_to_csv(emb.ids, emb.coords, labels))
    if emb.meta is not None:
        with open(f"{path}.meta", "w", encoding="ascii") as fh:
            m = emb.meta
            fh.write(f"perplexity={m.perplexity:.17g}\n")
            fh.write(f"iterations={m.iterations}\n")
            fh.write(f"rng_seed={m.rng_seed}\n")
            fh.write(f"final_kl={m.final_kl:.17g}\n")
            fh.write(f"initial_kl={m.initial_kl:.17g}\n")


def load_embedding(path):
    """Load a coordinate CSV (and sidecar meta when present).

    Returns (Embedding, labels-or-None). Files without a sidecar are
    accepted as precomputed embeddings with meta=None.
    """
    with open(path, "r", encoding="ascii") as fh:
        ids, coords, labels = matrix_from_csv(fh.read())
    meta = None
    try:
        with open(f"{path}.meta", "r", encoding="ascii") as fh:
            kv = dict(line.strip().split("=", 1) for line in fh if "=" in line)
        meta = EmbeddingMeta(
            perplexity=float(kv["perplexity"]),
            iterations=int(kv["iterations"]),
            rng_seed=int(kv["rng_seed"]),
            final_kl=float(kv["final_kl"]),
            initial_kl=float(kv["initial_kl"]),
        )
    except FileNotFoundError:
        pass
    return Embedding(ids=ids, coords=coords, meta=meta), labels
