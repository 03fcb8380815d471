"""Chain-structured quadratic benchmark with progress-gated gradient noise.

The objective is f(x) = 0.5 x'Ax - b'x where A is the scaled second-difference
matrix (1/4) tridiag(-1, 2, -1) and b = (1/4) * (-e1).  The matrix is kept
implicit: products use the three-point stencil, so every oracle call is O(d).

The stochastic gradient reveals the coordinates past the current "progress"
index only with probability `reveal_prob`.  Coordinates up to the last
nonzero entry of x are always exact; later coordinates are scaled by
xi / reveal_prob with xi ~ Bernoulli(reveal_prob), which keeps the estimator
unbiased while making progress along the chain a rare event.
"""

from __future__ import annotations

import math

import numpy as np


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                      rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system by forward elimination and back substitution.

    `lower` and `upper` have length n - 1.  No pivoting; intended for the
    diagonally dominant systems used here.
    """
    n = diag.size
    scratch = np.empty(n)
    out = np.empty(n)
    scratch[0] = upper[0] / diag[0] if n > 1 else 0.0
    out[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i - 1] * scratch[i - 1]
        scratch[i] = upper[i] / denom if i < n - 1 else 0.0
        out[i] = (rhs[i] - lower[i - 1] * out[i - 1]) / denom
    for i in range(n - 2, -1, -1):
        out[i] -= scratch[i] * out[i + 1]
    return out


class ChainQuadratic:
    """Quadratic objective whose stochastic gradient gates progress on a chain.

    Parameters
    ----------
    dim:
        Number of coordinates, at least 1.
    reveal_prob:
        Probability p in (0, 1] that a stochastic gradient reveals the
        coordinates beyond the current progress index.
    """

    def __init__(self, dim: int, reveal_prob: float):
        if int(dim) != dim or dim < 1:
            raise ValueError(f"dim must be a positive integer, got {dim!r}")
        if not 0.0 < reveal_prob <= 1.0:
            raise ValueError(f"reveal_prob must lie in (0, 1], got {reveal_prob!r}")
        self.dim = int(dim)
        self.reveal_prob = float(reveal_prob)

    # -- deterministic oracles -------------------------------------------

    def start_point(self) -> np.ndarray:
        """Initial iterate [sqrt(d), 0, ..., 0]."""
        x0 = np.zeros(self.dim)
        x0[0] = math.sqrt(self.dim)
        return x0

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """A @ x via the (1/4)(-1, 2, -1) stencil."""
        y = 0.5 * x
        y[1:] -= 0.25 * x[:-1]
        y[:-1] -= 0.25 * x[1:]
        return y

    def linear_term(self) -> np.ndarray:
        b = np.zeros(self.dim)
        b[0] = -0.25
        return b

    def objective_value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.matvec(x) - self.linear_term() @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.matvec(x) - self.linear_term()

    def prog(self, x: np.ndarray) -> int:
        """1-based index of the last nonzero coordinate, 0 for the zero vector."""
        nonzero = np.flatnonzero(x)
        return int(nonzero[-1]) + 1 if nonzero.size else 0

    # -- stochastic oracle -----------------------------------------------

    def gradient_realization(self, x: np.ndarray, xi: int) -> np.ndarray:
        """Stochastic gradient for a fixed Bernoulli outcome xi in {0, 1}."""
        g = self.gradient(x)
        k = self.prog(x)
        g[k:] *= xi / self.reveal_prob
        return g

    def stochastic_gradient(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        xi = 1 if rng.random() < self.reveal_prob else 0
        return self.gradient_realization(x, xi)

    def noise_second_moment(self, x: np.ndarray) -> float:
        """E||g_stoch - grad f||^2 at x, from the two-outcome enumeration.

        Only the coordinates past prog(x) fluctuate; each contributes
        grad_j^2 * (1 - p) / p.
        """
        p = self.reveal_prob
        g = self.gradient(x)
        k = self.prog(x)
        return float((1.0 - p) / p * np.sum(g[k:] ** 2))

    # -- constants for runtime analysis ----------------------------------

    def smoothness(self) -> float:
        """Largest eigenvalue of A, 0.5 * (1 - cos(d pi / (d + 1))), below 1."""
        d = self.dim
        return 0.5 * (1.0 - math.cos(d * math.pi / (d + 1)))

    def minimizer(self) -> np.ndarray:
        """Solve A x = b with the Thomas algorithm."""
        d = self.dim
        off = np.full(d - 1, -0.25)
        return solve_tridiagonal(off, np.full(d, 0.5), off, self.linear_term())

    def optimal_value(self) -> float:
        return self.objective_value(self.minimizer())

    def initial_gap(self) -> float:
        """f(x0) - f*."""
        return self.objective_value(self.start_point()) - self.optimal_value()
