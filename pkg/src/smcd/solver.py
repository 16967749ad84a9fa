"""Max-margin trainer for the patch change metric.

The learning problem asks for a weight vector w = (b, vec(M)) with

    min  1/2 ||w||^2 + (C/N) sum_k e_k
    s.t. y_k * w.u_k >= 1 - e_k,   e_k >= 0

over the lifted constraint features u_k = (1, vec(v_k v_k')).  Note the
bias rides inside w and is therefore regularized.  The equivalent
one-slack form replaces the N slacks with a single shared slack and one
aggregated constraint per subset of {1..N}:

    min  1/2 ||w||^2 + C*xi
    s.t. for every c in {0,1}^N:
         (1/N) w . sum_k c_k y_k u_k >= (1/N) sum_k c_k - xi,   xi >= 0

which a cutting-plane loop solves by repeatedly adding the currently
most violated aggregated constraint and re-solving a small QP over the
working set.  With (a_t, r_t) the aggregated working constraints, that
QP is solved in the dual

    max_alpha  alpha.r - 1/2 ||sum_t alpha_t a_t||^2
    s.t.       alpha >= 0,  sum_t alpha_t <= C

by pairwise coordinate ascent: the budget C - sum(alpha) is carried as
an explicit slack coordinate and mass is exchanged between the
coordinate pair with the largest KKT gap.  Single-coordinate projected
updates can stall on the sum(alpha) = C face (improving there needs a
transfer between two coordinates), so the exchange form is required for
correctness, not just speed.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet
from .diffops import MetricModel, lift_matrix, model_from_weights
from .errors import DataError, NumericError

# Working-set QP stopping: aim an order below the 1e-8 residual the
# cutting-plane loop needs to make reliable progress near tol.
_QP_KKT_TARGET = 1e-10
_QP_KKT_LIMIT = 1e-8
_QP_MAX_UPDATES = 200_000
_QP_REFRESH_EVERY = 256


@dataclass
class TrainConfig:
    c: float = 40.0
    tol: float = 1e-3
    max_iters: int = 200
    psd_project: bool = True

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"regularization c must be positive, got {self.c}")
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class SolverState:
    """Cutting-plane working set plus the current primal/dual iterate."""

    working_a: list[np.ndarray] = field(default_factory=list)
    working_r: list[float] = field(default_factory=list)
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    xi: float = 0.0

    def objective(self, c: float) -> float:
        return 0.5 * float(self.w @ self.w) + c * self.xi


def find_most_violated(
    state: SolverState, u: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, float]:
    """Select the aggregated constraint the current iterate violates most.

    The selector is separable: constraint k joins the set exactly when
    its margin y_k * w.u_k is below 1.  Returns the 0/1 selection vector
    and the violation (1/N) sum c_k - (1/N) w . sum c_k y_k u_k - xi.
    """
    if state.w.shape[0] != u.shape[1]:
        raise DataError(
            f"weight dimension {state.w.shape[0]} does not match features {u.shape[1]}"
        )
    margins = y * (u @ state.w)
    selected = margins < 1.0
    n = y.size
    r = float(selected.sum()) / n
    a = aggregate_constraint(u, y, selected)
    violation = r - float(state.w @ a) - state.xi
    return selected.astype(np.uint8), violation


def aggregate_constraint(u: np.ndarray, y: np.ndarray, selected: np.ndarray) -> np.ndarray:
    """Average the selected signed features: (1/N) sum_k c_k y_k u_k."""
    sel = np.asarray(selected, dtype=bool)
    return (y[sel] @ u[sel]) / y.size


def solve_working_qp(
    working_a: list[np.ndarray] | np.ndarray,
    working_r: list[float] | np.ndarray,
    c: float,
    alpha0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Solve the dual of the working-set QP to KKT residual < 1e-8.

    Returns (alpha, w, xi) with w = sum_t alpha_t a_t and
    xi = max(0, max_t(r_t - w.a_t)).  ``alpha0`` warm-starts the ascent.
    """
    a_mat = np.asarray(working_a, dtype=np.float64)
    r = np.asarray(working_r, dtype=np.float64)
    t = a_mat.shape[0]
    if t == 0:
        raise ValueError("working set is empty")

    gram = a_mat @ a_mat.T
    # Coordinate 0 is the budget slack (a = 0, r = 0); with it the
    # feasible set is the scaled simplex sum(alpha) == c, alpha >= 0.
    gram_h = np.zeros((t + 1, t + 1))
    gram_h[1:, 1:] = gram
    r_h = np.concatenate(([0.0], r))

    if alpha0 is None:
        alpha_h = np.zeros(t + 1)
        alpha_h[0] = c
    else:
        alpha_h = np.concatenate(([0.0], np.asarray(alpha0, dtype=np.float64)))
        alpha_h[0] = max(c - alpha_h[1:].sum(), 0.0)

    grad = r_h - gram_h @ alpha_h
    gap = np.inf
    for update in range(_QP_MAX_UPDATES):
        i = int(np.argmax(grad))
        movable = np.where(alpha_h > 0.0, grad, np.inf)
        j = int(np.argmin(movable))
        gap = grad[i] - movable[j]
        if gap <= _QP_KKT_TARGET:
            break
        eta = gram_h[i, i] - 2.0 * gram_h[i, j] + gram_h[j, j]
        delta = gap / eta if eta > 0.0 else np.inf
        delta = min(delta, alpha_h[j])
        alpha_h[i] += delta
        alpha_h[j] -= delta
        if alpha_h[j] < 0.0:
            alpha_h[j] = 0.0
        grad -= delta * (gram_h[:, i] - gram_h[:, j])
        if (update + 1) % _QP_REFRESH_EVERY == 0:
            grad = r_h - gram_h @ alpha_h  # shed accumulated drift
    if gap > _QP_KKT_LIMIT:
        raise NumericError(
            f"working-set QP did not reach KKT residual {_QP_KKT_LIMIT:g} "
            f"within {_QP_MAX_UPDATES} updates (gap {gap:g})"
        )

    alpha = alpha_h[1:]
    w = alpha @ a_mat
    xi = max(0.0, float(np.max(r - a_mat @ w)))
    return alpha, w, xi


def psd_project(m: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone (Frobenius-nearest).

    Eigendecomposes, clamps negative eigenvalues to zero, reconstructs,
    and re-symmetrizes to shed rounding asymmetry.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NumericError("eigendecomposition failed: non-finite input matrix")
    try:
        eigvals, eigvecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    clipped = np.maximum(eigvals, 0.0)
    out = (eigvecs * clipped) @ eigvecs.T
    return (out + out.T) / 2.0


def fit_lifted(u: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> tuple[SolverState, bool]:
    """Cutting-plane loop over pre-lifted features; the optimizer core.

    Logs one tab-separated line per iteration to stderr: iteration,
    working-set size, xi, violation, objective.  Returns the final state
    and whether the violation dropped below cfg.tol within max_iters
    (otherwise a warning is emitted and the last iterate is returned).
    """
    state = SolverState(w=np.zeros(u.shape[1]))
    converged = False
    for iteration in range(1, cfg.max_iters + 1):
        selected, violation = find_most_violated(state, u, y)
        print(
            f"{iteration}\t{len(state.working_a)}\t{state.xi:.6e}"
            f"\t{violation:.6e}\t{state.objective(cfg.c):.6e}",
            file=sys.stderr,
        )
        if violation < cfg.tol:
            converged = True
            break
        state.working_a.append(aggregate_constraint(u, y, selected))
        state.working_r.append(float(selected.sum()) / y.size)
        warm = np.concatenate((state.alpha, [0.0]))
        state.alpha, state.w, state.xi = solve_working_qp(
            state.working_a, state.working_r, cfg.c, alpha0=warm
        )
    if not converged:
        print(
            f"warning: stopped at max_iters={cfg.max_iters} before reaching "
            f"tol={cfg.tol:g}",
            file=sys.stderr,
        )
    return state, converged


def train(cs: ConstraintSet, cfg: TrainConfig | None = None) -> MetricModel:
    """Learn (M, b) from a constraint set with the one-slack trainer.

    The primal weight vector is reshaped into M = reshape(w[1:]),
    symmetrized, and PSD-projected unless cfg disables it.
    """
    if cfg is None:
        cfg = TrainConfig()
    if len(cs) == 0:
        raise DataError("constraint set is empty")
    ys = cs.ys
    if not ((ys > 0).any() and (ys < 0).any()):
        raise DataError("constraint set must contain both positive and negative pairs")
    vs = cs.vs
    if not np.isfinite(vs).all():
        raise DataError("constraint set contains non-finite difference vectors")
    side = int(round(cs.d**0.5))
    if side * side != cs.d or side % 2 == 0:
        raise DataError(f"diff-vector length {cs.d} is not the square of an odd patch side")

    state, _ = fit_lifted(lift_matrix(vs), ys, cfg)
    model = model_from_weights(state.w, cs.op, side)
    if cfg.psd_project:
        model = MetricModel(
            m=psd_project(model.m), b=model.b, op=model.op, patch_side=model.patch_side
        )
    return model
