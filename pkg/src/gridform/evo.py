"""
Elitist non-dominated sorting genetic algorithm (NSGA-II) for box-bounded
minimization problems.

A problem is any object with

* ``bounds``: array ``(n_vars, 2)`` of finite lower/upper bounds,
* ``objective_names``: sequence of objective labels,
* ``evaluate(x) -> array (n_obj,)``: objective values; a non-finite entry
  marks the design infeasible (it is then treated as all ``+inf``),

and optionally ``baseline``, a design injected as individual 0 of the
initial population.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class OptimizationError(ValueError):
    pass


def dominates(a, b) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.all(a <= b) and np.any(a < b))


def dominance_matrix(F) -> np.ndarray:
    """``D[i, j]`` is True when member ``i`` dominates member ``j``."""
    F = np.asarray(F, dtype=float)
    le = np.all(F[:, None, :] <= F[None, :, :], axis=-1)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=-1)
    return le & lt


def non_dominated_sort(F) -> list[list[int]]:
    """Partition member indices into successive non-dominated fronts."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or len(F) == 0:
        raise ValueError("population objectives must be a non-empty 2-D array")
    D = dominance_matrix(F)
    count = D.sum(axis=0)
    current = [int(i) for i in np.flatnonzero(count == 0)]
    fronts = []
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(D[i]):
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def crowding_distance(F) -> np.ndarray:
    """Crowding distance of each member of one front.

    Boundary members of every objective get ``inf``; interior members sum the
    neighbour gaps normalized by that objective's range.  Objectives with a
    zero or non-finite range contribute nothing.
    """
    F = np.asarray(F, dtype=float)
    n = len(F)
    if n == 0:
        raise ValueError("empty front")
    d = np.zeros(n)
    if n <= 2:
        d[:] = np.inf
        return d
    for k in range(F.shape[1]):
        order = np.argsort(F[:, k], kind="stable")
        f = F[order, k]
        d[order[0]] = d[order[-1]] = np.inf
        if not np.isfinite(f[0]) or not np.isfinite(f[-1]) or f[-1] <= f[0]:
            continue
        d[order[1:-1]] += (f[2:] - f[:-2]) / (f[-1] - f[0])
    return d


@dataclass(frozen=True)
class GAConfig:
    population: int = 40
    generations: int = 60
    crossover_prob: float = 0.9
    eta_c: float = 15.0
    mutation_prob: float | None = None     # None -> 1 / n_vars
    eta_m: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise ValueError("population must be even and >= 4")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for name in ("crossover_prob", "mutation_prob"):
            p = getattr(self, name)
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.eta_c < 0 or self.eta_m < 0:
            raise ValueError("distribution indices must be non-negative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "GAConfig":
        return cls(**d)


def _check_bounds(bounds) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or len(bounds) == 0:
        raise ValueError("bounds must have shape (n_vars, 2)")
    if not np.all(np.isfinite(bounds)) or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("bounds must be finite with lower < upper")
    return bounds


def _sbx_pair(x1, x2, lo, hi, eta, rng):
    """Bounded simulated binary crossover of two parents (Deb & Agrawal)."""
    c1, c2 = x1.copy(), x2.copy()
    for i in range(len(x1)):
        if rng.random() > 0.5 or abs(x1[i] - x2[i]) <= 1e-14:
            continue
        y1, y2 = min(x1[i], x2[i]), max(x1[i], x2[i])
        u = rng.random()
        out = []
        for beta in (1.0 + 2.0 * (y1 - lo[i]) / (y2 - y1), 1.0 + 2.0 * (hi[i] - y2) / (y2 - y1)):
            alpha = 2.0 - beta ** -(eta + 1.0)
            if u <= 1.0 / alpha:
                bq = (u * alpha) ** (1.0 / (eta + 1.0))
            else:
                bq = (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
            out.append(bq)
        a = 0.5 * ((y1 + y2) - out[0] * (y2 - y1))
        b = 0.5 * ((y1 + y2) + out[1] * (y2 - y1))
        a, b = min(max(a, lo[i]), hi[i]), min(max(b, lo[i]), hi[i])
        if rng.random() <= 0.5:
            a, b = b, a
        c1[i], c2[i] = a, b
    return c1, c2


def _polynomial_mutation(x, lo, hi, eta, prob, rng):
    y = x.copy()
    for i in range(len(x)):
        if rng.random() >= prob:
            continue
        span = hi[i] - lo[i]
        d1, d2 = (y[i] - lo[i]) / span, (hi[i] - y[i]) / span
        u = rng.random()
        p = 1.0 / (eta + 1.0)
        if u < 0.5:
            val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)
            dq = val ** p - 1.0
        else:
            val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)
            dq = 1.0 - val ** p
        y[i] = min(max(y[i] + dq * span, lo[i]), hi[i])
    return y


def variation(parents, bounds, config: GAConfig, rng) -> np.ndarray:
    """SBX crossover on consecutive parent pairs, then polynomial mutation.

    Offspring are clipped to ``bounds``.  An odd trailing parent is only mutated.
    """
    P = np.asarray(parents, dtype=float)
    bounds = _check_bounds(bounds)
    lo, hi = bounds[:, 0], bounds[:, 1]
    pm = 1.0 / P.shape[1] if config.mutation_prob is None else config.mutation_prob
    out = P.copy()
    for k in range(0, len(P) - 1, 2):
        if rng.random() < config.crossover_prob:
            out[k], out[k + 1] = _sbx_pair(P[k], P[k + 1], lo, hi, config.eta_c, rng)
    for k in range(len(out)):
        out[k] = _polynomial_mutation(out[k], lo, hi, config.eta_m, pm, rng)
    return np.clip(out, lo, hi)


def rank_and_crowding(F) -> tuple[np.ndarray, np.ndarray, list[list[int]]]:
    fronts = non_dominated_sort(F)
    rank = np.empty(len(F), dtype=int)
    crowd = np.empty(len(F))
    for r, front in enumerate(fronts):
        rank[front] = r
        crowd[front] = crowding_distance(np.asarray(F)[front])
    return rank, crowd, fronts


def tournament(rank, crowd, n, rng) -> np.ndarray:
    """Binary tournament: lower rank wins, then larger crowding, then a coin flip."""
    picks = np.empty(n, dtype=int)
    for k in range(n):
        a, b = rng.integers(len(rank), size=2)
        if rank[a] != rank[b]:
            picks[k] = a if rank[a] < rank[b] else b
        elif crowd[a] != crowd[b]:
            picks[k] = a if crowd[a] > crowd[b] else b
        else:
            picks[k] = a if rng.random() < 0.5 else b
    return picks


def environmental_selection(F, n) -> np.ndarray:
    """Indices of the best ``n`` members by front, then by descending crowding."""
    chosen = []
    for front in non_dominated_sort(F):
        if len(chosen) + len(front) <= n:
            chosen.extend(front)
            if len(chosen) == n:
                break
            continue
        d = crowding_distance(np.asarray(F)[front])
        order = sorted(range(len(front)), key=lambda i: (-d[i], front[i]))
        chosen.extend(front[i] for i in order[:n - len(chosen)])
        break
    return np.asarray(chosen, dtype=int)


@dataclass
class GenerationRecord:
    generation: int
    X: np.ndarray               # population after selection
    F: np.ndarray               # its objectives (+inf rows are infeasible)
    best: np.ndarray            # per-objective minimum over this population's feasible members
    best_so_far: np.ndarray     # per-objective minimum over every feasible design evaluated so far


@dataclass
class RunHistory:
    objective_names: tuple
    config: GAConfig
    initial: GenerationRecord
    records: list[GenerationRecord]
    archive_X: np.ndarray       # feasible first front of the final population
    archive_F: np.ndarray
    n_evaluations: int = 0
    variable_names: tuple = field(default_factory=tuple)
    baseline_F: np.ndarray | None = None    # objectives of the injected baseline design

    def best_so_far(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.records])

    def population_best(self) -> np.ndarray:
        return np.array([r.best for r in self.records])

    def history_csv(self) -> str:
        head = ["generation"] + [f"best_{n}" for n in self.objective_names]
        lines = [",".join(head)]
        for r in self.records:
            lines.append(",".join([str(r.generation)] + [_fmt(v) for v in r.best_so_far]))
        return "\n".join(lines) + "\n"

    def population_csv(self) -> str:
        n_vars = self.initial.X.shape[1]
        xs = list(self.variable_names) or [f"x{i}" for i in range(n_vars)]
        lines = [",".join(["generation", "individual", *xs, *self.objective_names])]
        for r in [self.initial, *self.records]:
            for k, (x, f) in enumerate(zip(r.X, r.F)):
                lines.append(",".join([str(r.generation), str(k), *map(_fmt, x), *map(_fmt, f)]))
        return "\n".join(lines) + "\n"

    def archive_dict(self) -> dict:
        return {
            "objective_names": list(self.objective_names),
            "variable_names": list(self.variable_names),
            "designs": [{"x": [float(v) for v in x], "objectives": [float(v) for v in f]}
                        for x, f in zip(self.archive_X, self.archive_F)],
        }


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _best(F) -> np.ndarray:
    feas = np.all(np.isfinite(F), axis=1)
    if not feas.any():
        return np.full(F.shape[1], np.inf)
    return F[feas].min(axis=0)


def final_front(X, F):
    """Feasible, de-duplicated first front of a population."""
    feas = np.all(np.isfinite(F), axis=1)
    X, F = X[feas], F[feas]
    _, first = np.unique(X, axis=0, return_index=True)
    first = np.sort(first)
    X, F = X[first], F[first]
    keep = ~dominance_matrix(F).any(axis=0)
    return X[keep], F[keep]


def evaluate_population(problem, X) -> np.ndarray:
    """Evaluate designs in order; any non-finite objective vector becomes all ``+inf``."""
    n_obj = len(problem.objective_names)
    F = np.empty((len(X), n_obj))
    for k, x in enumerate(X):
        f = np.asarray(problem.evaluate(x), dtype=float)
        if f.shape != (n_obj,):
            raise OptimizationError(f"objective vector has shape {f.shape}, expected ({n_obj},)")
        F[k] = f if np.all(np.isfinite(f)) else np.inf
    return F


def run(problem, config: GAConfig = GAConfig(), callback: Callable | None = None) -> RunHistory:
    """Run NSGA-II and return the per-generation history and final archive."""
    bounds = _check_bounds(problem.bounds)
    lo, hi = bounds[:, 0], bounds[:, 1]
    rng = np.random.default_rng(config.seed)
    N = config.population
    X = lo + rng.random((N, len(bounds))) * (hi - lo)
    baseline = getattr(problem, "baseline", None)
    if baseline is not None:
        b = np.asarray(baseline, dtype=float)
        if b.shape != lo.shape or np.any(b < lo) or np.any(b > hi):
            raise OptimizationError("baseline design lies outside the bounds")
        X[0] = b
    F = evaluate_population(problem, X)
    if not np.all(np.isfinite(F), axis=1).any():
        raise OptimizationError("every design in the initial population is infeasible")
    if baseline is not None and not np.all(np.isfinite(F[0])):
        raise OptimizationError("baseline design is infeasible")
    n_evals = N
    best_so_far = _best(F)
    initial = GenerationRecord(0, X.copy(), F.copy(), best_so_far.copy(), best_so_far.copy())
    records = []
    for gen in range(1, config.generations + 1):
        rank, crowd, _ = rank_and_crowding(F)
        parents = X[tournament(rank, crowd, N, rng)]
        children = variation(parents, bounds, config, rng)
        Fc = evaluate_population(problem, children)
        n_evals += N
        XU, FU = np.vstack([X, children]), np.vstack([F, Fc])
        keep = environmental_selection(FU, N)
        X, F = XU[keep], FU[keep]
        best_so_far = np.minimum(best_so_far, _best(Fc))
        rec = GenerationRecord(gen, X.copy(), F.copy(), _best(F), best_so_far.copy())
        records.append(rec)
        if callback is not None:
            callback(rec)
    AX, AF = final_front(X, F)
    return RunHistory(tuple(problem.objective_names), config, initial, records, AX, AF, n_evals,
                      tuple(getattr(problem, "variable_names", ())),
                      None if baseline is None else initial.F[0].copy())


def reduction_report(series, names: Sequence[str]) -> dict:
    """Initial value, best value and percent reduction for each objective column."""
    S = np.asarray(series, dtype=float)
    if S.ndim != 2 or len(S) == 0:
        raise ValueError("series must be a non-empty (steps, n_obj) array")
    out = {}
    for k, name in enumerate(names):
        first, best = float(S[0, k]), float(np.min(S[:, k]))
        pct = 0.0 if first == best else 100.0 * (first - best) / abs(first)
        out[name] = {"initial": first, "best": best, "reduction_percent": pct}
    return out


def convergence_report(history: RunHistory) -> dict:
    """Per-objective best-so-far reductions.

    The reference value is the baseline design when the problem supplied
    one, otherwise the best of the initial population.
    """
    first = history.initial.best_so_far if history.baseline_F is None else history.baseline_F
    series = np.vstack([first, history.best_so_far()])
    return reduction_report(series, history.objective_names)


@dataclass
class FunctionProblem:
    """Wrap a plain function ``f(x) -> objectives`` as a problem."""
    bounds: np.ndarray
    func: Callable
    objective_names: tuple
    baseline: np.ndarray | None = None

    def evaluate(self, x):
        return self.func(np.asarray(x, dtype=float))
