"""Exact flat and Wasserstein-1 distances between finite discrete measures.

The supremum over test functions is restricted to the values ``f_k`` on the
union of both supports. This loses nothing: a node assignment that is
1-Lipschitz and bounded by 1 extends to all of R^d (McShane extension, then
clip to [-1, 1]). The resulting LP

    max  sum_k c_k f_k
    s.t. f_i - f_j <= |x_i - x_j|,   |f_k| <= M

is solved through its dual, an uncapacitated transport problem with one row
per node. Its columns are arcs ``i -> j`` (cost ``|x_i - x_j|``) and
deletion/creation slacks at every node (cost ``M``). The simplex multipliers
at the optimum are the optimal ``f``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NumericalFailure, UnbalancedWasserstein
from .measures import DiscreteMeasure, MeasurePair

MERGE_TOL = 1e-12


class Mode(str, Enum):
    FLAT = "flat"
    WASSERSTEIN = "wasserstein"


@dataclass(frozen=True, eq=False)
class DualLP:
    """Test-function LP on the merged support.

    ``objective[k]`` is mass(mu) - mass(nu) at node k. ``box_bound`` is None
    in Wasserstein mode. ``pairs`` lists the unordered node pairs (i < j);
    each encodes ``|f_i - f_j| <= distances[i, j]``.
    """

    nodes: np.ndarray
    objective: np.ndarray
    distances: np.ndarray
    box_bound: float | None
    mu_nodes: np.ndarray  # node index of every mu support point, in input order

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def pairs(self) -> np.ndarray:
        i, j = np.triu_indices(self.n_nodes, k=1)
        return np.column_stack([i, j])

    @property
    def n_constraints(self) -> int:
        n = self.n_nodes
        return n * (n - 1) // 2 + (2 * n if self.box_bound is not None else 0)


def _pairwise(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _merge(points: np.ndarray, tol: float = MERGE_TOL):
    """Representative node for every point; points within ``tol`` share a node."""
    n = points.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros((0, points.shape[1]))
    dist = _pairwise(points)
    close = dist <= tol
    # first index within tol of each point; chains collapse onto earlier nodes
    rep = np.argmax(close, axis=1)
    rep = rep[rep]
    uniq, node_of = np.unique(rep, return_inverse=True)
    return node_of, points[uniq]


def build_lp(pair: MeasurePair, mode: Mode | str = Mode.FLAT) -> DualLP:
    mode = Mode(mode)
    mu, nu = pair.mu, pair.nu
    if mode is Mode.WASSERSTEIN:
        m_mu, m_nu = mu.total_mass, nu.total_mass
        if abs(m_mu - m_nu) > 1e-9 * max(1.0, m_mu, m_nu):
            raise UnbalancedWasserstein(f"Wasserstein mode needs equal masses, got {m_mu} and {m_nu}")
    points = np.vstack([mu.points, nu.points])
    node_of, nodes = _merge(points)
    objective = np.zeros(nodes.shape[0])
    np.add.at(objective, node_of[: mu.size], mu.weights)
    np.add.at(objective, node_of[mu.size :], -nu.weights)
    nodes.flags.writeable = False
    return DualLP(
        nodes=nodes,
        objective=objective,
        distances=_pairwise(nodes),
        box_bound=1.0 if mode is Mode.FLAT else None,
        mu_nodes=node_of[: mu.size],
    )


class _TransportSimplex:
    """Revised primal simplex for  min cost.y  s.t.  A y = b,  y >= 0.

    Column layout (``n`` nodes): arc ``i -> j`` has index ``i*n + j`` and
    column ``e_i - e_j``; index ``n*n + k`` is the deletion slack ``+e_k``;
    ``n*n + n + k`` is the creation slack ``-e_k``. Self-arcs ``i*n + i`` are
    never priced. Pricing is Dantzig's rule, switching to Bland's rule after a
    run of degenerate pivots so the method cannot cycle.
    """

    def __init__(self, dist: np.ndarray, rhs: np.ndarray, slack_cost: float):
        self.n = n = rhs.shape[0]
        self.dist = dist
        self.rhs = rhs
        self.slack_cost = slack_cost
        scale = max(1.0, float(np.abs(rhs).max(initial=0.0)), float(dist.max(initial=0.0)), slack_cost)
        self.tol = 1e-11 * scale
        self.basis = np.where(rhs >= 0, n * n + np.arange(n), n * n + n + np.arange(n))
        self.refactor()

    def column(self, q: int) -> np.ndarray:
        n = self.n
        a = np.zeros(n)
        if q < n * n:
            i, j = divmod(q, n)
            a[i] += 1.0
            a[j] -= 1.0
        elif q < n * n + n:
            a[q - n * n] = 1.0
        else:
            a[q - n * n - n] = -1.0
        return a

    def cost(self, q: np.ndarray) -> np.ndarray:
        n = self.n
        arc = q < n * n
        out = np.full(q.shape, self.slack_cost)
        out[arc] = self.dist.reshape(-1)[q[arc]]
        return out

    def refactor(self):
        B = np.column_stack([self.column(int(q)) for q in self.basis])
        try:
            self.binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis") from exc
        self.x = self.binv @ self.rhs

    def reduced_costs(self, pi: np.ndarray) -> np.ndarray:
        n = self.n
        rc = np.empty(n * n + 2 * n)
        arcs = self.dist - pi[:, None] + pi[None, :]
        np.fill_diagonal(arcs, np.inf)
        rc[: n * n] = arcs.reshape(-1)
        rc[n * n : n * n + n] = self.slack_cost - pi
        rc[n * n + n :] = self.slack_cost + pi
        return rc

    def solve(self, max_iter: int | None = None):
        n = self.n
        max_iter = max_iter or 50 * (n * n + 2 * n) + 1000
        degenerate_run = 0
        bland = False
        for it in range(max_iter):
            if it and it % 100 == 0:
                self.refactor()
            pi = self.binv.T @ self.cost(self.basis)
            rc = self.reduced_costs(pi)
            candidates = np.flatnonzero(rc < -self.tol)
            if candidates.size == 0:
                return pi
            q = int(candidates[0]) if bland else int(np.argmin(rc))
            direction = self.binv @ self.column(q)
            rows = np.flatnonzero(direction > 1e-12)
            if rows.size == 0:
                raise NumericalFailure("LP is unbounded; the transport dual must be bounded")
            ratios = np.maximum(self.x[rows], 0.0) / direction[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-14]
            # Bland: among tied rows leave the basic variable with the smallest index
            r = int(ties[np.argmin(self.basis[ties])])
            step = max(self.x[r], 0.0) / direction[r]
            if step <= 1e-14:
                degenerate_run += 1
                bland = bland or degenerate_run > 2 * n
            else:
                degenerate_run = 0
                bland = False
            self.x -= step * direction
            self.x[r] = step
            self.basis[r] = q
            pivot = direction[r]
            row = self.binv[r] / pivot
            self.binv -= np.outer(direction, row)
            self.binv[r] = row
        raise NumericalFailure(f"simplex did not converge in {max_iter} iterations")

    def primal_value(self) -> float:
        return float(self.cost(self.basis) @ self.x)


def solve_exact(lp: DualLP):
    """Optimal value and node assignment ``f`` of the test-function LP.

    In flat mode ``f`` is returned as found (the box makes it non shift
    invariant). In Wasserstein mode ``f`` is shifted to vanish at the first
    support node of mu.
    """
    n = lp.n_nodes
    if n == 0 or not np.any(lp.objective):
        return 0.0, np.zeros(n)
    if lp.box_bound is not None:
        bound = lp.box_bound
    else:
        # equal masses: an optimal f can be shifted to 0 at one node, so any
        # bound above the diameter is inactive
        bound = float(lp.distances.max()) + 1.0
    solver = _TransportSimplex(lp.distances, lp.objective, bound)
    f = solver.solve()
    value = float(lp.objective @ f)
    primal = solver.primal_value()
    scale = max(1.0, float(np.abs(lp.objective).sum()) * bound)
    if abs(primal - value) > 1e-9 * scale:
        raise NumericalFailure(f"duality gap {primal - value:.3e} after convergence")
    if lp.box_bound is None and lp.mu_nodes.size:
        f = f - f[lp.mu_nodes[0]]
    _check_feasible(lp, f)
    return value, f


def _check_feasible(lp: DualLP, f: np.ndarray, tol: float = 1e-9) -> None:
    excess = (f[:, None] - f[None, :]) - lp.distances
    worst = float(excess.max(initial=0.0))
    if lp.box_bound is not None:
        worst = max(worst, float(np.abs(f).max(initial=0.0)) - lp.box_bound)
    if worst > tol:
        raise NumericalFailure(f"optimal f violates a constraint by {worst:.3e}")


def flat_distance_exact(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    return solve_exact(build_lp(MeasurePair(mu, nu), Mode.FLAT))[0]


def wasserstein_exact(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    return solve_exact(build_lp(MeasurePair(mu, nu), Mode.WASSERSTEIN))[0]
