"""Golub-Kahan bidiagonalization generalized to a semi-inner product.

The process couples the data space, carrying the Euclidean inner product,
with the unknown's space carrying the (semi-)inner product of a norm whose
pseudoinverse K^+ we can apply. Each solution-space direction z comes with
a shadow vector zbar = K z maintained by the recurrence itself, so inner
products <z, z'>_K = z^T zbar' never touch K. With K the adaptive kernel,
K^+ p = B^-1 A^T A B^-1 p; with K = B it is B^-1 p; with K = I it is p and
the process reduces to the classical bidiagonalization behind LSQR.

Scalars follow the usual convention: beta_i couple data-space vectors u,
alpha_i couple solution-space vectors, and the process stops when either
falls to roundoff scale, at which point the generated subspace is exhausted.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalBreakdownError, StateError, TrivialDataError

_EPS = np.finfo(float).eps


@dataclass
class BidiagStep:
    """One advance of the process: scalars and (unless terminal) new directions."""

    alpha: float
    beta: float
    z: np.ndarray | None
    zbar: np.ndarray | None
    terminated: bool
    reason: str | None = None


@dataclass
class BidiagFactors:
    """Collected output of a full run.

    alphas holds the diagonal couplings (alpha_1, alpha_2, ...) and betas
    the data-space couplings (beta_1 = data norm, beta_2, ...). U, Z, Zbar
    hold the generated directions; Zbar[i] is the shadow K Z[i]. When the
    run terminated, betas has one more entry than alphas (the closing
    coupling, zero if the data-space direction vanished) and k_t is the
    exhaustion step.
    """

    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    U: list = field(default_factory=list)
    Z: list = field(default_factory=list)
    Zbar: list = field(default_factory=list)
    terminated: bool = False
    k_t: int | None = None

    def bidiagonal_matrix(self, k=None):
        """The (k+1) x k lower bidiagonal coupling matrix."""
        if k is None:
            k = min(len(self.alphas), len(self.betas) - 1)
        mat = np.zeros((k + 1, k))
        for i in range(k):
            mat[i, i] = self.alphas[i]
            mat[i + 1, i] = self.betas[i + 1]
        return mat


class BidiagProcess:
    """Incremental bidiagonalization keeping O(n) state by default.

    Parameters
    ----------
    linmap : LinearMap
        The forward operator.
    b : array
        Data vector; must be nonzero.
    pinv_apply : callable or None
        Action of K^+ on a vector; None means the identity metric.
    reorthogonalize : bool
        Re-project each new direction against all previous ones (twice,
        modified Gram-Schmidt). Implies keeping the full history.
    keep_vectors : bool or None
        Retain all generated vectors. Defaults to the value of
        reorthogonalize.
    """

    def __init__(self, linmap, b, pinv_apply=None, reorthogonalize=False, keep_vectors=None):
        b = np.asarray(b, dtype=np.float64)
        self.linmap = linmap
        self.pinv_apply = pinv_apply if pinv_apply is not None else lambda p: p
        self.reorthogonalize = bool(reorthogonalize)
        self.keep_vectors = self.reorthogonalize if keep_vectors is None else bool(keep_vectors)

        beta1 = float(np.linalg.norm(b))
        if beta1 == 0.0:
            raise TrivialDataError("data vector is identically zero")
        u = b / beta1
        self.beta1 = beta1
        self.terminated = False
        self.reason = None
        self.k_t = None
        self.alphas = []
        self.betas = [beta1]
        self.U = [u]
        self.Z = []
        self.Zbar = []
        self.u = u
        self.z = None
        self.zbar = None

        p = linmap.apply_adjoint(u)
        s = self.pinv_apply(p)
        sp = self._checked_pairing(s, p)
        if sp == 0.0:
            # data carries no component in the explorable range
            self.alpha1 = 0.0
            self.terminated = True
            self.reason = "alpha"
            self.k_t = 0
            self._tol = 0.0
            return
        alpha1 = float(np.sqrt(sp))
        self.alpha1 = alpha1
        self.alphas.append(alpha1)
        self.z = s / alpha1
        self.zbar = p / alpha1
        if self.keep_vectors:
            self.Z.append(self.z)
            self.Zbar.append(self.zbar)
        # roundoff floor for declaring a coupling zero
        scale = max(alpha1, beta1)
        self._tol = max(linmap.rows, linmap.cols) * _EPS * scale

    def _checked_pairing(self, s, p, abs_tol=0.0):
        # the exact pairing is a positive semidefinite quadratic form; a
        # negative value is roundoff unless it is large both relative to the
        # summands and on the termination scale
        sp = float(s @ p)
        if sp < 0.0:
            rel_tol = s.shape[0] * _EPS * np.linalg.norm(s) * np.linalg.norm(p)
            if sp < -rel_tol and -sp > abs_tol * abs_tol:
                raise NumericalBreakdownError(
                    f"pairing s^T p = {sp:.3e} is negative beyond roundoff ({rel_tol:.3e})"
                )
            sp = 0.0
        return sp

    def advance(self):
        """Produce couplings (alpha_{i+1}, beta_{i+1}) and the next directions.

        Returns a BidiagStep; when the process exhausts the subspace the
        step has terminated=True (carrying the closing beta if the
        data-space direction was still valid) and the state freezes with
        k_t set to the number of completed solution directions.
        """
        if self.terminated:
            raise StateError("process already terminated")
        i = len(self.alphas)  # completed directions so far
        r = self.linmap.apply(self.z) - self.alphas[-1] * self.u
        if self.reorthogonalize:
            for _ in range(2):
                for uj in self.U:
                    r -= (uj @ r) * uj
        beta_next = float(np.linalg.norm(r))
        if beta_next <= self._tol:
            self.terminated = True
            self.reason = "beta"
            self.k_t = i
            self.betas.append(0.0)
            return BidiagStep(0.0, 0.0, None, None, True, "beta")
        u_next = r / beta_next
        p = self.linmap.apply_adjoint(u_next) - beta_next * self.zbar
        s = self.pinv_apply(p)
        if self.reorthogonalize:
            for _ in range(2):
                for zj, zbarj in zip(self.Z, self.Zbar):
                    c = float(s @ zbarj)
                    s -= c * zj
                    p -= c * zbarj
        sp = self._checked_pairing(s, p, self._tol)
        alpha_next = float(np.sqrt(sp))
        if alpha_next <= self._tol:
            self.terminated = True
            self.reason = "alpha"
            self.k_t = i
            self.betas.append(beta_next)
            self.u = u_next
            if self.keep_vectors:
                self.U.append(u_next)
            return BidiagStep(0.0, beta_next, None, None, True, "alpha")
        z_next = s / alpha_next
        zbar_next = p / alpha_next
        self.u = u_next
        self.z = z_next
        self.zbar = zbar_next
        self.alphas.append(alpha_next)
        self.betas.append(beta_next)
        if self.keep_vectors:
            self.U.append(u_next)
            self.Z.append(z_next)
            self.Zbar.append(zbar_next)
        return BidiagStep(alpha_next, beta_next, z_next, zbar_next, False)

    def factors(self):
        return BidiagFactors(
            alphas=list(self.alphas),
            betas=list(self.betas),
            U=list(self.U),
            Z=list(self.Z),
            Zbar=list(self.Zbar),
            terminated=self.terminated,
            k_t=self.k_t,
        )


def run_bidiag(geom, b, max_steps, reorthogonalize=False):
    """Run the adaptive-kernel process and collect all factors.

    Stops after max_steps advances or at subspace exhaustion, whichever
    comes first. Vectors are always retained in the returned factors.
    """
    proc = BidiagProcess(
        geom.linmap,
        b,
        pinv_apply=geom.apply_crkhs_pinv,
        reorthogonalize=reorthogonalize,
        keep_vectors=True,
    )
    for _ in range(int(max_steps)):
        if proc.terminated:
            break
        proc.advance()
    return proc.factors()
