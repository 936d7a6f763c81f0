"""Linear programming and equilibrium solvers for matrix and normal-form games.

The LP engine is a two-phase revised simplex using Bland's rule for the
entering column and the ratio-test tie-break, so results are reproducible. Each
step solves against the original columns, so rounding error does not build up
across pivots. Problem sizes here are tiny (stage games of a few
actions, normal-form games of a few hundred profiles).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceFailure, InfeasibleLP, InvalidArgument, UnboundedLP

PIVOT_TOL = 1e-9


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    fun: float
    # Reduced costs of the inequality slack columns at the optimum. For rows
    # whose right-hand side is nonnegative these are the negated duals.
    slack_reduced_costs: np.ndarray
    iterations: int


def _run_simplex(A: np.ndarray, b: np.ndarray, cost: np.ndarray, basis: list[int], allowed: np.ndarray, max_iter: int) -> int:
    """Revised simplex from a feasible basis; every step re-solves with the original columns."""
    m = A.shape[0]
    tol = PIVOT_TOL * max(1.0, float(np.abs(cost).max(initial=0.0)))
    it = 0
    while True:
        B = A[:, basis]
        y = np.linalg.solve(B.T, cost[basis])
        reduced = cost - A.T @ y
        reduced[basis] = 0.0
        candidates = np.flatnonzero((reduced < -tol) & allowed)
        if candidates.size == 0:
            return it
        col = int(candidates[0])
        column = np.linalg.solve(B, A[:, col])
        xb = np.maximum(np.linalg.solve(B, b), 0.0)
        positive = column > PIVOT_TOL
        if not positive.any():
            raise UnboundedLP("objective unbounded below")
        ratios = np.full(m, np.inf)
        ratios[positive] = xb[positive] / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
        # Bland's rule among the ties, skipping pivots that are tiny next to the best one
        sound = ties[column[ties] >= 1e-3 * column[ties].max()]
        row = int(min(sound, key=lambda i: basis[i]))
        basis[row] = col
        it += 1
        if it > max_iter:
            raise ConvergenceFailure("simplex iteration budget exhausted", float("nan"))


def linprog_simplex(
    c,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    max_iter: int = 50_000,
) -> LPResult:
    """Minimize c @ x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0."""
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    if A_ub.shape[1] != n or A_eq.shape[1] != n or b_ub.size != m_ub or b_eq.size != m_eq:
        raise InvalidArgument("LP dimension mismatch")
    m = m_ub + m_eq

    # equilibrate rows so pivot tolerances mean the same thing for every constraint
    row_scale = np.abs(np.vstack([A_ub, A_eq])).max(axis=1, initial=0.0)
    row_scale[row_scale == 0.0] = 1.0
    A_ub, b_ub = A_ub / row_scale[:m_ub, None], b_ub / row_scale[:m_ub]
    A_eq, b_eq = A_eq / row_scale[m_ub:, None], b_eq / row_scale[m_ub:]

    A = np.zeros((m, n + m_ub))
    b = np.zeros(m)
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b[:m_ub] = b_ub
    b[m_ub:] = b_eq
    flipped = b < 0
    A[flipped] *= -1.0
    b[flipped] *= -1.0

    needs_art = [i for i in range(m) if i >= m_ub or flipped[i]]
    n_struct = n + m_ub
    n_total = n_struct + len(needs_art)
    A = np.hstack([A, np.zeros((m, len(needs_art)))])
    basis = [n + i if i < m_ub else -1 for i in range(m)]
    for k, i in enumerate(needs_art):
        A[i, n_struct + k] = 1.0
        basis[i] = n_struct + k

    iterations = 0
    if needs_art:
        # phase 1: minimize the sum of artificials
        cost1 = np.zeros(n_total)
        cost1[n_struct:] = 1.0
        iterations += _run_simplex(A, b, cost1, basis, np.ones(n_total, dtype=bool), max_iter)
        xb = np.linalg.solve(A[:, basis], b)
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if sum(v for j, v in zip(basis, xb) if j >= n_struct) > 1e-9 * scale:
            raise InfeasibleLP("no feasible point")
        # swap remaining artificials out of the basis or drop redundant equality rows
        keep = list(range(m))
        for r in range(m):
            if basis[r] < n_struct:
                continue
            Binv_row = np.linalg.solve(A[:, basis].T, np.eye(m)[r])
            entries = Binv_row @ A[:, :n_struct]
            entries[[j for j in basis if j < n_struct]] = 0.0
            nz = np.flatnonzero(np.abs(entries) > 1e-9)
            if nz.size:
                basis[r] = int(nz[np.argmax(np.abs(entries[nz]))])
            else:
                keep.remove(r)
        A, b = A[keep][:, :n_struct], b[keep]
        basis = [basis[r] for r in keep]

    A = A[:, :n_struct]
    cost = np.zeros(n_struct)
    cost[:n] = c
    iterations += _run_simplex(A, b, cost, basis, np.ones(n_struct, dtype=bool), max_iter)

    x = np.zeros(n_struct)
    x[basis] = np.maximum(np.linalg.solve(A[:, basis], b), 0.0)
    y = np.linalg.solve(A[:, basis].T, cost[basis])
    reduced = cost - A.T @ y
    slack_rc = reduced[n:n_struct] / row_scale[:m_ub]
    return LPResult(x=x[:n], fun=float(c @ x[:n]), slack_reduced_costs=slack_rc, iterations=iterations)


# ---------------------------------------------------------------------------
# Zero-sum matrix games


@dataclass(frozen=True)
class MatrixGame:
    payoff: np.ndarray

    def __post_init__(self):
        U = np.array(self.payoff, dtype=float)
        if U.ndim != 2 or U.shape[0] == 0 or U.shape[1] == 0:
            raise InvalidArgument("matrix game needs at least one row and one column")
        if not np.isfinite(U).all():
            raise InvalidArgument("matrix game entries must be finite")
        U.setflags(write=False)
        object.__setattr__(self, "payoff", U)


def _first_within(values: np.ndarray, target: float, tol: float = 1e-12) -> int:
    return int(np.flatnonzero(np.abs(values - target) <= tol * max(1.0, abs(target)))[0])


def minimax_solve(game) -> tuple[np.ndarray, np.ndarray, float]:
    """Optimal (row, column, value) of a zero-sum matrix game; rows maximize."""
    U = game.payoff if isinstance(game, MatrixGame) else MatrixGame(game).payoff
    m, n = U.shape

    row_min = U.min(axis=1)
    col_max = U.max(axis=0)
    lower, upper = row_min.max(), col_max.min()
    if upper - lower <= 1e-12 * max(1.0, abs(lower)):
        # pure saddle point: lowest-index maximin row and minimax column
        x = np.zeros(m)
        y = np.zeros(n)
        x[_first_within(row_min, lower)] = 1.0
        y[_first_within(col_max, upper)] = 1.0
        return x, y, float(lower)

    # column player LP: max sum(w) s.t. U' w <= 1, w >= 0 with U' > 0
    shift = 1.0 - U.min()
    Up = U + shift
    res = linprog_simplex(-np.ones(n), A_ub=Up, b_ub=np.ones(m))
    total = res.x.sum()
    y = res.x / total
    u = np.maximum(res.slack_reduced_costs, 0.0)
    x = u / u.sum()
    value = 1.0 / total - shift
    return x, y, float(value)


# ---------------------------------------------------------------------------
# Normal-form games


@dataclass(frozen=True)
class NormalFormGame:
    """payoffs[i] is player i's payoff tensor over joint pure profiles."""

    payoffs: np.ndarray

    def __post_init__(self):
        u = np.array(self.payoffs, dtype=float)
        if u.ndim < 2 or u.shape[0] != u.ndim - 1:
            raise InvalidArgument("payoffs must have shape (N, n_1, ..., n_N)")
        if not np.isfinite(u).all():
            raise InvalidArgument("payoffs must be finite")
        u.setflags(write=False)
        object.__setattr__(self, "payoffs", u)

    @property
    def num_players(self) -> int:
        return self.payoffs.shape[0]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(self.payoffs.shape[1:])


@dataclass(frozen=True)
class JointDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if (p < -1e-12).any() or abs(p.sum() - 1.0) > 1e-10:
            raise InvalidArgument("joint distribution must be nonnegative and sum to 1")
        p = np.maximum(p, 0.0)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class ProductDistribution:
    marginals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ms = []
        for q in self.marginals:
            q = np.array(q, dtype=float)
            if q.ndim != 1 or (q < -1e-12).any() or abs(q.sum() - 1.0) > 1e-10:
                raise InvalidArgument("each marginal must be a probability vector")
            q = np.maximum(q, 0.0)
            q.setflags(write=False)
            ms.append(q)
        object.__setattr__(self, "marginals", tuple(ms))

    def joint(self) -> np.ndarray:
        out = np.ones(())
        for q in self.marginals:
            out = np.multiply.outer(out, q)
        return out


def cce_deviation_gains(game: NormalFormGame, joint: JointDistribution) -> list[np.ndarray]:
    """Per player, the gain of each fixed pure deviation against the joint law."""
    p = joint.probs
    gains = []
    for i in range(game.num_players):
        u = game.payoffs[i]
        current = float((p * u).sum())
        others = p.sum(axis=i, keepdims=True)
        deviation = (u * others).sum(axis=tuple(j for j in range(p.ndim) if j != i))
        gains.append(deviation - current)
    return gains


def ne_deviation_gains(game: NormalFormGame, prod: ProductDistribution) -> list[np.ndarray]:
    gains = []
    for i in range(game.num_players):
        u = game.payoffs[i]
        for j in reversed(range(game.num_players)):
            if j != i:
                u = np.tensordot(u, prod.marginals[j], axes=([j], [0]))
        gains.append(u - float(prod.marginals[i] @ u))
    return gains


def _distinct_strategies(game: NormalFormGame) -> list[np.ndarray]:
    """First index of each class of strategies with identical payoff slices, per player."""
    keep = []
    for i in range(game.num_players):
        slices = np.moveaxis(game.payoffs, i + 1, 0).reshape(game.counts[i], -1)
        _, first = np.unique(np.round(slices, 12), axis=0, return_index=True)
        keep.append(np.sort(first))
    return keep


def cce_solve(game: NormalFormGame) -> JointDistribution:
    """Welfare-maximizing coarse correlated equilibrium via one LP.

    Strategies with identical payoffs are merged first; duplicates make the LP
    highly degenerate and add nothing to the constraint set.
    """
    keep = _distinct_strategies(game)
    if any(len(k) < n for k, n in zip(keep, game.counts)):
        reduced = game.payoffs[np.ix_(np.arange(game.num_players), *keep)]
        small = _cce_lp(NormalFormGame(reduced))
        full = np.zeros(game.counts)
        full[np.ix_(*keep)] = small
        return JointDistribution(full)
    return JointDistribution(_cce_lp(game))


def _cce_lp(game: NormalFormGame) -> np.ndarray:
    shape = game.counts
    n_profiles = int(np.prod(shape))
    rows = []
    for i in range(game.num_players):
        u = game.payoffs[i]
        for d in range(shape[i]):
            dev = np.take(u, [d], axis=i)
            rows.append((np.broadcast_to(dev, shape) - u).ravel())
    welfare = game.payoffs.sum(axis=0).ravel()
    res = linprog_simplex(
        -welfare,
        A_ub=np.array(rows),
        b_ub=np.zeros(len(rows)),
        A_eq=np.ones((1, n_profiles)),
        b_eq=np.ones(1),
    )
    p = res.x / res.x.sum()
    return p.reshape(shape)


def _support_feasibility(U1: np.ndarray, U2: np.ndarray, I, J):
    """Find (x, y) supported on I, J making each side indifferent on its support."""
    n1, n2 = U1.shape
    # variables: x (n1), y (n2), v1, v2 ; payoffs already shifted positive
    nv = n1 + n2 + 2
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    for a in range(n1):
        row = np.zeros(nv)
        row[n1:n1 + n2] = U1[a]
        row[n1 + n2] = -1.0
        (A_eq if a in I else A_ub).append(row)
        (b_eq if a in I else b_ub).append(0.0)
    for b in range(n2):
        row = np.zeros(nv)
        row[:n1] = U2[:, b]
        row[n1 + n2 + 1] = -1.0
        (A_eq if b in J else A_ub).append(row)
        (b_eq if b in J else b_ub).append(0.0)
    for a in range(n1):
        if a not in I:
            row = np.zeros(nv)
            row[a] = 1.0
            A_eq.append(row)
            b_eq.append(0.0)
    for b in range(n2):
        if b not in J:
            row = np.zeros(nv)
            row[n1 + b] = 1.0
            A_eq.append(row)
            b_eq.append(0.0)
    row = np.zeros(nv)
    row[:n1] = 1.0
    A_eq.append(row)
    b_eq.append(1.0)
    row = np.zeros(nv)
    row[n1:n1 + n2] = 1.0
    A_eq.append(row)
    b_eq.append(1.0)
    try:
        res = linprog_simplex(
            np.zeros(nv),
            A_ub=np.array(A_ub) if A_ub else None,
            b_ub=np.array(b_ub) if b_ub else None,
            A_eq=np.array(A_eq),
            b_eq=np.array(b_eq),
        )
    except InfeasibleLP:
        return None
    x = res.x[:n1]
    y = res.x[n1:n1 + n2]
    return x / x.sum(), y / y.sum()


def _undominated(U1: np.ndarray, U2: np.ndarray):
    """Row and column indices left after iterated removal of strictly dominated pure strategies."""
    rows, cols = list(range(U1.shape[0])), list(range(U1.shape[1]))
    changed = True
    while changed:
        changed = False
        sub = U1[np.ix_(rows, cols)]
        keep = [a for a in range(len(rows)) if not any((sub[b] > sub[a] + 1e-12).all() for b in range(len(rows)) if b != a)]
        if len(keep) < len(rows):
            rows = [rows[a] for a in keep]
            changed = True
        sub = U2[np.ix_(rows, cols)]
        keep = [c for c in range(len(cols)) if not any((sub[:, d] > sub[:, c] + 1e-12).all() for d in range(len(cols)) if d != c)]
        if len(keep) < len(cols):
            cols = [cols[c] for c in keep]
            changed = True
    return rows, cols


def _indifference(U: np.ndarray):
    """Mixed strategy over the columns of square U making every row's payoff equal.

    Returns None for a singular system and False when the solution leaves the simplex.
    """
    k = U.shape[0]
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = U
    M[:k, k] = -1.0
    M[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    z = sol[:k]
    if not np.isfinite(z).all():
        return None
    if z.min() < -1e-12:
        return False
    z = np.maximum(z, 0.0)
    return z / z.sum()


def _two_player_ne(game: NormalFormGame, tol: float, max_supports: int) -> ProductDistribution:
    """Support enumeration on the reduced game, balanced supports first.

    Duplicate and strictly dominated strategies are removed before the search;
    both keep every equilibrium of the reduced game an equilibrium of the full
    one. Balanced supports are tried with a direct indifference solve; the LP
    feasibility check covers unbalanced (degenerate) supports.
    """
    n1, n2 = game.counts
    keep = _distinct_strategies(game)
    U1 = game.payoffs[0][np.ix_(keep[0], keep[1])]
    U2 = game.payoffs[1][np.ix_(keep[0], keep[1])]
    r, c = _undominated(U1, U2)
    rows, cols = keep[0][r], keep[1][c]
    U1, U2 = U1[np.ix_(r, c)], U2[np.ix_(r, c)]
    m1, m2 = U1.shape

    def lift(x, y):
        fx, fy = np.zeros(n1), np.zeros(n2)
        fx[rows], fy[cols] = x, y
        return ProductDistribution((fx, fy))

    shift = 1.0 - min(U1.min(), U2.min())
    S1, S2 = U1 + shift, U2 + shift
    shapes = sorted(
        ((k1, k2) for k1 in range(1, m1 + 1) for k2 in range(1, m2 + 1)),
        key=lambda s: (abs(s[0] - s[1]), s[0] + s[1], s[0]),
    )
    best = np.inf
    count = 0
    for k1, k2 in shapes:
        for I in itertools.combinations(range(m1), k1):
            for J in itertools.combinations(range(m2), k2):
                count += 1
                if count > max_supports:
                    raise ConvergenceFailure("support enumeration found no equilibrium within budget", best)
                sol = None
                direct = k1 == k2
                if direct:
                    y = _indifference(S1[np.ix_(I, J)])
                    x = _indifference(S2[np.ix_(I, J)].T) if y is not False else False
                    if x is None or y is None:
                        direct = False
                    elif x is not False and y is not False:
                        sol = (np.zeros(m1), np.zeros(m2))
                        sol[0][list(I)], sol[1][list(J)] = x, y
                if not direct:
                    sol = _support_feasibility(S1, S2, set(I), set(J))
                if sol is None:
                    continue
                prod = lift(*sol)
                gap = _max_gap(game, prod)
                if gap <= tol:
                    return prod
                best = min(best, gap)
    raise ConvergenceFailure("support enumeration found no equilibrium within budget", best)


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _pure_nash(game: NormalFormGame, tol: float):
    for profile in itertools.product(*(range(n) for n in game.counts)):
        ok = True
        for i in range(game.num_players):
            idx = list(profile)
            idx[i] = slice(None)
            if game.payoffs[i][tuple(idx)].max() - game.payoffs[i][profile] > tol:
                ok = False
                break
        if ok:
            return ProductDistribution(tuple(np.eye(n)[a] for n, a in zip(game.counts, profile)))
    return None


def _max_gap(game: NormalFormGame, prod: ProductDistribution) -> float:
    return max(float(g.max()) for g in ne_deviation_gains(game, prod))


def ne_solve(
    game: NormalFormGame,
    tol: float = 1e-6,
    max_supports: int = 50_000,
    restarts: int = 20,
    iterations: int = 5_000,
    seed: int = 0,
) -> ProductDistribution:
    """Nash equilibrium: support enumeration for two players, projected ascent for three."""
    if game.num_players > 3:
        raise InvalidArgument("ne_solve supports at most three players")
    pure = _pure_nash(game, tol)
    if pure is not None:
        return pure

    if game.num_players == 1:
        raise AssertionError("single-player games always have a pure optimum")

    if game.num_players == 2:
        return _two_player_ne(game, tol, max_supports)

    gen = np.random.default_rng(seed)
    best = np.inf
    for r in range(restarts):
        xs = [np.full(n, 1.0 / n) if r == 0 else gen.dirichlet(np.ones(n)) for n in game.counts]
        for t in range(iterations):
            prod = ProductDistribution(tuple(xs))
            gains = ne_deviation_gains(game, prod)
            gap = max(float(g.max()) for g in gains)
            best = min(best, gap)
            if gap <= tol:
                return prod
            step = 1.0 / np.sqrt(t + 1.0)
            xs = [_project_simplex(x + step * g) for x, g in zip(xs, gains)]
    raise ConvergenceFailure("projected ascent did not reach tolerance", best)
