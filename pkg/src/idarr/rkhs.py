"""Data-adaptive weighted geometry and the dense spectral machinery.

The operator's normalized absolute column sums define a discrete measure
rho on the unknown's grid. The reproducing-kernel norm adapted to the
operator is the quadratic form of the pseudoinverse of

    C = B (A^T A)^+ B,      B = diag(rho),

whose own pseudoinverse has the closed form C^+ = B^-1 A^T A B^-1 and is
therefore applicable matrix-free. The dense routines here (generalized
eigendecomposition, norm evaluation, regularized direct solves) serve both
as baselines and as oracles for the iterative solver.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateColumnError, DimensionError, GeometryError, TrivialDataError
from .linops import LinearMap

_LOG_FLOOR = 1e-300  # clamp before taking logs so zero residuals stay finite


def compute_exploration_weights(linmap):
    """Normalized absolute column sums of the operator.

    The result is a strictly positive probability vector; a column with
    zero absolute sum means the corresponding unknown is never explored by
    the data and raises DegenerateColumnError.
    """
    sums = np.asarray(linmap.column_abs_sums(), dtype=np.float64)
    zero = np.flatnonzero(sums <= 0.0)
    if zero.size:
        raise DegenerateColumnError(zero[0], zero.size)
    return sums / sums.sum()


@dataclass
class RkhsGeometry:
    """An operator together with its exploration measure."""

    linmap: LinearMap
    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.rho.ndim != 1 or self.rho.shape[0] != self.linmap.cols:
            raise GeometryError(
                f"weights must have length {self.linmap.cols}, got shape {self.rho.shape}"
            )
        if np.any(self.rho <= 0) or not np.all(np.isfinite(self.rho)):
            raise GeometryError("weights must be strictly positive and finite")
        # Any positive diagonal weight is a valid geometry (uniform weights
        # of 1 recover the plain Euclidean metric); normalization to a
        # probability vector is the job of compute_exploration_weights.

    def apply_b(self, v):
        return self.rho * v

    def solve_b(self, v):
        return v / self.rho

    def b_matrix(self):
        """Dense diagonal weight matrix; intended for oracle-scale problems only."""
        return np.diag(self.rho)

    def apply_crkhs_pinv(self, p):
        """Apply C^+ = B^-1 A^T A B^-1 without forming any matrix."""
        t = self.linmap.apply(p / self.rho)
        return self.linmap.apply_adjoint(t) / self.rho

    def weighted_norm(self, v):
        """Norm in L2(rho): sqrt(sum_i rho_i v_i^2)."""
        v = np.asarray(v, dtype=np.float64)
        return float(np.sqrt(np.sum(self.rho * v * v)))


def make_geometry(linmap):
    return RkhsGeometry(linmap, compute_exploration_weights(linmap))


@dataclass
class SpectralDecomposition:
    """Eigenpairs of A^T A V = B V Lam with V^T B V = I, eigenvalues descending."""

    V: np.ndarray
    lambdas: np.ndarray
    rank: int


def generalized_eig(gram_or_map, rho):
    """Solve the weighted eigenproblem by symmetric reduction.

    Accepts either the n x n normal matrix A^T A or a LinearMap (densified
    internally). With D = diag(sqrt(rho)), the symmetric matrix
    D^-1 (A^T A) D^-1 is diagonalized and eigenvectors are mapped back by
    D^-1, which enforces the B-orthonormality exactly. Eigenvalues are
    clamped at zero and the rank counts those above lambda_max * n * eps.
    """
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise GeometryError("weights must be strictly positive and finite")
    if isinstance(gram_or_map, LinearMap):
        a = gram_or_map.as_dense()
        gram = a.T @ a
    else:
        gram = np.asarray(gram_or_map, dtype=np.float64)
    n = rho.shape[0]
    if gram.shape != (n, n):
        raise DimensionError(f"normal matrix must be {n}x{n}, got {gram.shape}")
    d = np.sqrt(rho)
    sym = gram / d[:, None] / d[None, :]
    sym = 0.5 * (sym + sym.T)
    mu, q = np.linalg.eigh(sym)
    order = np.argsort(mu)[::-1]
    mu = np.maximum(mu[order], 0.0)
    v = q[:, order] / d[:, None]
    lam_max = mu[0] if mu.size else 0.0
    rank = int(np.count_nonzero(mu > lam_max * n * np.finfo(float).eps))
    return SpectralDecomposition(V=v, lambdas=mu, rank=rank)


def rkhs_norm_sq(decomp, rho, x):
    """Quadratic form x^T C^+ ... evaluated spectrally: x^T (V Lam V^T)^+ x.

    Uses the B-orthonormality inverse V^-1 = V^T B, truncated at the
    decomposition's rank; components outside the range contribute nothing.
    """
    rho = np.asarray(rho, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    r = decomp.rank
    if r == 0:
        return 0.0
    coeffs = decomp.V[:, :r].T @ (rho * x)
    return float(np.sum(coeffs**2 / decomp.lambdas[:r]))


@dataclass
class DirectResult:
    """Solution path of a regularized direct solve with its selected point."""

    x: np.ndarray
    lam: float
    corner_index: int
    lambdas: np.ndarray
    residual_sq: np.ndarray
    penalty_sq: np.ndarray
    weak_corner: bool = False
    path: np.ndarray | None = field(default=None, repr=False)


def _select_corner(residual_sq, penalty_sq):
    # curve ordered so residual decreases; corner logic shared with the
    # iterative selection rule
    from .solver import lcurve_corner

    pts = list(
        zip(
            np.log(np.maximum(residual_sq, _LOG_FLOOR)),
            np.log(np.maximum(penalty_sq, _LOG_FLOOR)),
        )
    )
    return lcurve_corner(pts)


def _lambda_grid(lam_max, lam_min, count=64):
    # The ladder spans the spectrum and extends a few decades below its
    # smallest positive value: for well-conditioned systems the best
    # strength sits far under the smallest eigenvalue (the noiseless
    # optimum is lambda -> 0), so stopping the sweep at lam_min would pin
    # the solution to an over-regularized point. The machine-precision
    # floor keeps the ladder finite when the spectrum is numerically
    # rank-deficient.
    lo = max(1e-4 * lam_min, 1e-14 * lam_max)
    return np.geomspace(lam_max, lo, int(count))


def dartr_solve(linmap, rho, b, n_lambdas=64, keep_path=False):
    """Direct adaptive-norm regularization over a spectral coordinate ladder.

    Transforms the penalized normal equations with the square-root factor
    C_* = V Lam^(1/2) restricted to the numerical rank, where the penalty
    becomes the plain squared norm, sweeps a logarithmic ladder of
    regularization strengths spanning the eigenvalue range, and picks the
    strength at the corner of the (log residual^2, log penalty^2) curve.
    """
    b = np.asarray(b, dtype=np.float64)
    if np.linalg.norm(b) == 0:
        raise TrivialDataError("data vector is identically zero")
    a = linmap.as_dense() if isinstance(linmap, LinearMap) else np.asarray(linmap, float)
    rho = np.asarray(rho, dtype=np.float64)
    decomp = generalized_eig(a.T @ a, rho)
    r = decomp.rank
    if r == 0:
        raise TrivialDataError("operator has numerical rank zero")
    cstar = decomp.V[:, :r] * np.sqrt(decomp.lambdas[:r])[None, :]
    acs = a @ cstar
    gram_t = acs.T @ acs
    rhs_t = acs.T @ b
    # one eigendecomposition of the transformed gram matrix makes every
    # ladder point an O(r^2) solve
    mu, q = np.linalg.eigh(0.5 * (gram_t + gram_t.T))
    mu = np.maximum(mu, 0.0)
    g = q.T @ rhs_t
    lambdas = _lambda_grid(decomp.lambdas[0], decomp.lambdas[r - 1], n_lambdas)
    residual_sq = np.empty(lambdas.shape[0])
    penalty_sq = np.empty(lambdas.shape[0])
    path = np.empty((lambdas.shape[0], a.shape[1])) if keep_path else None
    for j, lam in enumerate(lambdas):
        y = q @ (g / (mu + lam))
        res = acs @ y - b
        residual_sq[j] = res @ res
        penalty_sq[j] = y @ y
        if keep_path:
            path[j] = cstar @ y
    # re-solve at the corner only, to avoid storing the full path by default
    corner, weak = _select_corner(residual_sq, penalty_sq)
    y = q @ (g / (mu + lambdas[corner]))
    x = cstar @ y
    return DirectResult(
        x=x,
        lam=float(lambdas[corner]),
        corner_index=int(corner),
        lambdas=lambdas,
        residual_sq=residual_sq,
        penalty_sq=penalty_sq,
        weak_corner=weak,
        path=path,
    )


def tikhonov_direct(linmap, b, weights=None, n_lambdas=64, keep_path=False):
    """Classical regularized least squares with a diagonal penalty.

    weights None penalizes the plain squared norm; a positive weight vector
    w penalizes sum_i w_i x_i^2. The strength ladder spans the squared
    singular value range of the (column-scaled) operator and the returned
    point is the corner of the (log residual^2, log penalty^2) curve.
    """
    b = np.asarray(b, dtype=np.float64)
    if np.linalg.norm(b) == 0:
        raise TrivialDataError("data vector is identically zero")
    a = linmap.as_dense() if isinstance(linmap, LinearMap) else np.asarray(linmap, float)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights <= 0):
            raise GeometryError("penalty weights must be strictly positive")
        scale = 1.0 / np.sqrt(weights)
        a_s = a * scale[None, :]
    else:
        scale = None
        a_s = a
    u, sig, vt = np.linalg.svd(a_s, full_matrices=False)
    ub = u.T @ b
    lam_max = sig[0] ** 2 if sig.size else 0.0
    if lam_max == 0.0:
        raise TrivialDataError("operator is identically zero")
    lambdas = _lambda_grid(lam_max, sig[-1] ** 2 if sig[-1] > 0 else 0.0, n_lambdas)
    bsq = float(b @ b)
    ub_sq = float(ub @ ub)
    residual_sq = np.empty(lambdas.shape[0])
    penalty_sq = np.empty(lambdas.shape[0])
    path = np.empty((lambdas.shape[0], a.shape[1])) if keep_path else None
    for j, lam in enumerate(lambdas):
        f = sig / (sig**2 + lam)
        y = vt.T @ (f * ub)
        # residual^2 = ||(I - U F Sig) U^T b||^2 + ||b - U U^T b||^2
        resid_in = ub * (1.0 - sig * f)
        residual_sq[j] = float(resid_in @ resid_in) + max(bsq - ub_sq, 0.0)
        penalty_sq[j] = float(y @ y)
        if keep_path:
            path[j] = y * scale if scale is not None else y
    corner, weak = _select_corner(residual_sq, penalty_sq)
    f = sig / (sig**2 + lambdas[corner])
    y = vt.T @ (f * ub)
    x = y * scale if scale is not None else y
    return DirectResult(
        x=x,
        lam=float(lambdas[corner]),
        corner_index=int(corner),
        lambdas=lambdas,
        residual_sq=residual_sq,
        penalty_sq=penalty_sq,
        weak_corner=weak,
        path=path,
    )
