#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Optimización de recompensas del proveedor (CSP)
===============================================
Regímenes:
  - discriminatory: una recompensa por MU, (2I + 2 mu t K) r = mu s 1 - 2 mu t K d - d
  - uniform:        una recompensa común, cociente escalar en K 1 y K d
  - uniform-bound:  cota inferior con información incompleta (E[a], E[b])

con K = (B - G)^{-1} y d = a - c·1. K se aplica siempre mediante
resoluciones lineales sobre una factorización de B - G.

Cada solución se evalúa en dos bases:
  - equilibrio: el perfil de participación realmente alcanzado (forma
    cerrada si es interior, dinámica de mejor respuesta si no).
  - matricial: el perfil x = K (a + r - c·1) sin recortar, que es el que
    la forma cerrada del ingreso supone.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from equilibrium import (
    EquilibriumResult,
    InteractionSolver,
    SolverConfig,
    solve_br_dynamics,
    solve_closed_form,
    solve_equilibrium,
)
from market_core import (
    InvariantError,
    MarketInstance,
    MarketShape,
    SolverError,
    as_vector,
    csp_revenue,
    mu_utilities,
    shape_of,
)

logger = logging.getLogger(__name__)

DISCRIMINATORY = "discriminatory"
UNIFORM = "uniform"
UNIFORM_BOUND = "uniform-bound"
REGIMES = (DISCRIMINATORY, UNIFORM, UNIFORM_BOUND)
UNIFORM_CLAMPED = "uniform-clamped"

BASIS_EQUILIBRIUM = "equilibrium"
BASIS_MATRIX = "matrix"
REVENUE_BASES = (BASIS_EQUILIBRIUM, BASIS_MATRIX)

HESSIAN_CHECK_MAX_N = 10
BOUND_TOL = 1e-9


@dataclass(frozen=True)
class ExpectationProfile:
    """Medias de a y b conocidas por el proveedor."""
    e_a: float
    e_b: float

    def __post_init__(self):
        if not (np.isfinite(self.e_a) and np.isfinite(self.e_b)):
            raise InvariantError("las esperanzas de a y b deben ser finitas")
        if self.e_b <= 0:
            raise InvariantError(f"E[b] debe ser > 0 (valor {self.e_b})")

    @classmethod
    def from_instance(cls, inst: MarketInstance) -> "ExpectationProfile":
        """Medias muestrales de la propia instancia."""
        return cls(float(np.mean(inst.a)), float(np.mean(inst.b)))


@dataclass(frozen=True, eq=False)
class RewardSolution:
    regime: str
    r: np.ndarray
    equilibrium: EquilibriumResult
    revenue: float
    mu_utilities: np.ndarray
    matrix_x: np.ndarray
    matrix_revenue: float
    warnings: Tuple[str, ...] = ()

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.r))

    @property
    def total_mu_utility(self) -> float:
        return float(np.sum(self.mu_utilities))

    @property
    def total_reward_paid(self) -> float:
        return float(self.r @ self.equilibrium.x)

    @property
    def matrix_interior(self) -> bool:
        return bool(np.all(self.matrix_x > 0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "regime": self.regime,
            "r": self.r.tolist(),
            "revenue": self.revenue,
            "total_mu_utility": self.total_mu_utility,
            "total_reward_paid": self.total_reward_paid,
            "equilibrium": self.equilibrium.to_dict(),
            "matrix_x": self.matrix_x.tolist(),
            "matrix_revenue": self.matrix_revenue,
            "warnings": list(self.warnings),
        }


def _d(inst: MarketInstance) -> np.ndarray:
    return inst.a - inst.params.c


def revenue_at(inst: MarketInstance, r: Any, cfg: Optional[SolverConfig] = None,
               basis: str = BASIS_EQUILIBRIUM, solver: Optional[InteractionSolver] = None
               ) -> Tuple[np.ndarray, float]:
    """(x, Pi) para un vector de recompensas dado en la base pedida."""
    r = as_vector(r, inst.n, "r")
    if basis == BASIS_MATRIX:
        x = (solver or InteractionSolver.for_instance(inst)).solve(_d(inst) + r)
    elif basis == BASIS_EQUILIBRIUM:
        x = solve_equilibrium(inst, r, cfg, solver).x
    else:
        raise InvariantError(f"base de ingreso desconocida: {basis!r} (use {' o '.join(REVENUE_BASES)})")
    return x, csp_revenue(inst, x, r)


def _hessian(func: Callable[[np.ndarray], float], point: np.ndarray, h: float) -> np.ndarray:
    n = point.size
    hess = np.zeros((n, n))
    eye = np.eye(n) * h
    f0 = func(point)
    for i in range(n):
        for j in range(i, n):
            if i == j:
                value = (func(point + eye[i]) - 2 * f0 + func(point - eye[i])) / h ** 2
            else:
                value = (func(point + eye[i] + eye[j]) - func(point + eye[i] - eye[j])
                         - func(point - eye[i] + eye[j]) + func(point - eye[i] - eye[j])) / (4 * h ** 2)
            hess[i, j] = hess[j, i] = value
    return hess


def revenue_hessian(inst: MarketInstance, r: Any, h: float = 1e-3,
                    basis: str = BASIS_MATRIX) -> np.ndarray:
    """Hessiana numérica del ingreso respecto a r (diferencias centradas)."""
    r = as_vector(r, inst.n, "r")
    solver = InteractionSolver.for_instance(inst)
    return _hessian(lambda v: revenue_at(inst, v, basis=basis, solver=solver)[1], r, h)


def revenue_gradient(inst: MarketInstance, r: Any, h: float = 1e-6,
                     cfg: Optional[SolverConfig] = None, uniform: bool = False) -> np.ndarray:
    """
    Gradiente numérico del ingreso de equilibrio. Con uniform=True se deriva
    respecto a la recompensa común (vector de longitud 1).
    """
    r = as_vector(r, inst.n, "r")
    directions = [np.ones(inst.n)] if uniform else list(np.eye(inst.n))
    grad = np.zeros(len(directions))
    for k, e in enumerate(directions):
        plus = revenue_at(inst, r + h * e, cfg)[1]
        minus = revenue_at(inst, r - h * e, cfg)[1]
        grad[k] = (plus - minus) / (2 * h)
    return grad


def _build_solution(inst: MarketInstance, regime: str, r: np.ndarray,
                    cfg: Optional[SolverConfig], solver: InteractionSolver,
                    notes: Optional[List[str]] = None) -> RewardSolution:
    """Evalúa un vector de recompensas en ambas bases y reúne los avisos."""
    notes = list(notes or [])
    closed = solve_closed_form(inst, r, cfg, solver)
    matrix_revenue = csp_revenue(inst, closed.x, r)

    if closed.interior:
        eq = closed
    else:
        notes.append(
            f"non-interior: la participación matricial tiene {int(np.sum(closed.x <= 0))} MU con x <= 0; "
            f"el ingreso de equilibrio se evalúa con la dinámica de mejor respuesta"
        )
        eq = solve_br_dynamics(inst, r, cfg)
        if not eq.converged:
            notes.append(f"not-converged: la dinámica no convergió en {eq.iterations} barridos")

    negative = np.flatnonzero(r < 0)
    if negative.size:
        notes.append(f"negative-reward: {negative.size} MU reciben una recompensa negativa (tasa)")

    for note in notes:
        logger.info(f"[{regime}] {note}")

    return RewardSolution(
        regime=regime,
        r=r,
        equilibrium=eq,
        revenue=csp_revenue(inst, eq.x, r),
        mu_utilities=mu_utilities(inst, eq.x, r),
        matrix_x=closed.x,
        matrix_revenue=matrix_revenue,
        warnings=tuple(notes),
    )


def _concavity_note(inst: MarketInstance, r: np.ndarray, uniform: bool,
                    solver: InteractionSolver) -> Optional[str]:
    """Comprobación numérica de segundo orden para mercados pequeños."""
    if inst.n > HESSIAN_CHECK_MAX_N:
        return None
    func = lambda v: revenue_at(inst, v, basis=BASIS_MATRIX, solver=solver)[1]
    if uniform:
        ones = np.ones(inst.n)
        curvature = _hessian(lambda s: func(s[0] * ones), np.array([r[0]]), 1e-3)
        top = float(curvature[0, 0])
    else:
        top = float(linalg.eigvalsh(_hessian(func, r, 1e-3))[-1])
    tolerance = 1e-6 * max(1.0, abs(inst.params.mu * inst.params.s) * inst.n)
    if top > tolerance:
        return f"hessian: la hessiana del ingreso no es semidefinida negativa (autovalor {top:.3e})"
    return None


def discriminatory_reward(inst: MarketInstance, cfg: Optional[SolverConfig] = None) -> RewardSolution:
    """
    Óptimo discriminatorio. (2I + 2 mu t K) r = v se resuelve como
    (2(B - G) + 2 mu t I) r = (B - G) v, con v = mu s 1 - 2 mu t K d - d.
    """
    p = inst.params
    solver = InteractionSolver.for_instance(inst)
    d = _d(inst)
    kd = solver.solve(d)
    v = p.mu * p.s * np.ones(inst.n) - 2 * p.mu * p.t * kd - d
    m = solver.matrix
    system = InteractionSolver(2 * m + 2 * p.mu * p.t * np.eye(inst.n), label="2(B - G) + 2 mu t I")
    r = system.solve(m @ v)
    if not np.all(np.isfinite(r)):
        raise SolverError("la recompensa discriminatoria no es finita")
    notes = []
    note = _concavity_note(inst, r, False, solver)
    if note:
        notes.append(note)
    return _build_solution(inst, DISCRIMINATORY, r, cfg, solver, notes)


def _uniform_scalar(inst: MarketInstance, solver: InteractionSolver) -> float:
    p = inst.params
    ones = np.ones(inst.n)
    d = _d(inst)
    k1 = solver.solve(ones)
    kk1 = solver.solve(k1)
    kd = solver.solve(d)
    s1 = float(ones @ k1)
    numerator = p.mu * p.s * s1 - 2 * p.mu * p.t * float(d @ kk1) - float(ones @ kd)
    denominator = 2 * p.mu * p.t * float(ones @ kk1) + 2 * s1
    if not denominator > 0:
        raise SolverError(f"denominador de la recompensa uniforme no positivo ({denominator})")
    return numerator / denominator


def uniform_reward(inst: MarketInstance, cfg: Optional[SolverConfig] = None) -> RewardSolution:
    """Óptimo con una única recompensa para todos los MU."""
    solver = InteractionSolver.for_instance(inst)
    value = _uniform_scalar(inst, solver)
    r = np.full(inst.n, value)
    notes = []
    note = _concavity_note(inst, r, True, solver)
    if note:
        notes.append(note)
    return _build_solution(inst, UNIFORM, r, cfg, solver, notes)


def average_discriminatory_reward(inst: MarketInstance, cfg: Optional[SolverConfig] = None) -> float:
    return discriminatory_reward(inst, cfg).mean_reward


def ones_quadratic_inverse(matrix: np.ndarray, label: str = "matriz") -> float:
    """1^T X^{-1} 1 mediante una resolución lineal."""
    solver = InteractionSolver(matrix, label=label)
    return float(np.sum(solver.solve(np.ones(matrix.shape[0]))))


def _bound_from(shape: MarketShape, e_a: float, diagonal: np.ndarray) -> float:
    p = shape.params
    n = shape.n
    matrix = np.diag(diagonal) - 2 * shape.graph.weights + 2 * p.mu * p.t * np.eye(n)
    quad = ones_quadratic_inverse(matrix, label="2 E[B] - 2G + 2 mu t I")
    return ((p.c - e_a) / 2 + p.mu * p.s / 2
            - (p.mu * p.t / n) * (p.mu * p.s + e_a - p.c) * quad)


def incomplete_info_bound(shape: MarketShape, exp: ExpectationProfile) -> float:
    """
    Cota inferior de la recompensa uniforme cuando sólo se conocen E[a] y E[b]:
    r_u = (c - E[a])/2 + mu s/2 - (mu t / N)(mu s + E[a] - c) 1^T [2E[B] - 2G + 2 mu t I]^{-1} 1
    Exige el Supuesto 2 (c >= E[a] + mu s).
    """
    p = shape.params
    if p.c < exp.e_a + p.mu * p.s:
        raise InvariantError(
            f"Supuesto 2 no se cumple (c={p.c} < E[a] + mu s = {exp.e_a + p.mu * p.s}): "
            f"la dirección de la cota no está garantizada"
        )
    return _bound_from(shape, exp.e_a, np.full(shape.n, 4.0 * exp.e_b))


def realized_bound_reward(shape: MarketShape, e_a: float, b: Any) -> float:
    """La misma expresión con B realizada en lugar de E[B] (sin exigir el Supuesto 2)."""
    b = as_vector(b, shape.n, "b")
    return _bound_from(shape, e_a, 4.0 * b)


@dataclass(frozen=True)
class JensenCheck:
    mean: float
    stderr: float
    bound: float
    draws: int

    @property
    def holds(self) -> bool:
        return self.mean >= self.bound - 2 * self.stderr


def jensen_monte_carlo(shape: MarketShape, exp: ExpectationProfile,
                       sample_b: Callable[[np.random.Generator, int], np.ndarray],
                       draws: int = 1000, seed: int = 0) -> JensenCheck:
    """Media Monte Carlo de la cota realizada frente a la cota con E[b]."""
    if draws < 2:
        raise InvariantError("jensen_monte_carlo necesita al menos 2 muestras")
    bound = incomplete_info_bound(shape, exp)
    rng = np.random.default_rng(seed)
    values = np.array([realized_bound_reward(shape, exp.e_a, sample_b(rng, shape.n)) for _ in range(draws)])
    return JensenCheck(
        mean=float(values.mean()),
        stderr=float(values.std(ddof=1) / np.sqrt(draws)),
        bound=bound,
        draws=draws,
    )


def uniform_bound_reward(inst: MarketInstance, exp: ExpectationProfile,
                         cfg: Optional[SolverConfig] = None) -> RewardSolution:
    """Recompensa uniforme fijada en la cota de información incompleta."""
    value = incomplete_info_bound(shape_of(inst), exp)
    solver = InteractionSolver.for_instance(inst)
    optimum = _uniform_scalar(inst, solver)
    notes = []
    if value > optimum + BOUND_TOL * max(1.0, abs(optimum)):
        notes.append(f"bound-above-optimum: r_u = {value:.6f} supera el óptimo uniforme r* = {optimum:.6f}")
    return _build_solution(inst, UNIFORM_BOUND, np.full(inst.n, value), cfg, solver, notes)


def uniform_reward_clamped(inst: MarketInstance, cfg: Optional[SolverConfig] = None,
                           grid_steps: int = 201) -> RewardSolution:
    """
    Mejor recompensa uniforme r >= 0 sobre el ingreso de equilibrio real
    (con participación recortada a 0). Rejilla gruesa y refinamiento acotado.
    """
    p = inst.params
    solver = InteractionSolver.for_instance(inst)
    upper = max(p.mu * p.s, _uniform_scalar(inst, solver), 0.0)
    upper = upper * 1.5 if upper > 0 else 1.0
    ones = np.ones(inst.n)

    def objective(value: float) -> float:
        return revenue_at(inst, value * ones, cfg, solver=solver)[1]

    grid = np.linspace(0.0, upper, grid_steps)
    values = np.array([objective(v) for v in grid])
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid_steps - 1)]
    choice, choice_value = float(grid[best]), float(values[best])
    if hi > lo:
        refined = optimize.minimize_scalar(lambda v: -objective(v), bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-10})
        if refined.success and -refined.fun > choice_value:
            choice = float(refined.x)
    return _build_solution(inst, UNIFORM_CLAMPED, np.full(inst.n, choice), cfg, solver)


def _grid_revenues(inst: MarketInstance, rewards: np.ndarray, cfg: Optional[SolverConfig],
                   solver: InteractionSolver) -> np.ndarray:
    """Ingreso de equilibrio para una matriz de recompensas (una fila por punto)."""
    p = inst.params
    x = solver.solve((_d(inst)[:, None] + rewards.T)).T
    revenues = p.mu * np.sum(p.s * x - p.t * x ** 2, axis=1) - np.sum(rewards * x, axis=1)
    for k in np.flatnonzero(~np.all(x > 0, axis=1)):
        revenues[k] = csp_revenue(inst, solve_br_dynamics(inst, rewards[k], cfg).x, rewards[k])
    return revenues


def _check_range(r_range: Tuple[float, float], steps: int):
    lo, hi = r_range
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise InvariantError(f"rango de recompensas inválido: {r_range}")
    if steps < 2:
        raise InvariantError(f"la rejilla necesita al menos 2 puntos (steps={steps})")


def brute_force_uniform(inst: MarketInstance, r_range: Tuple[float, float] = (-5.0, 25.0),
                        steps: int = 30001, cfg: Optional[SolverConfig] = None) -> float:
    """Oráculo: argmax del ingreso de equilibrio sobre una rejilla de recompensas comunes."""
    _check_range(r_range, steps)
    solver = InteractionSolver.for_instance(inst)
    grid = np.linspace(r_range[0], r_range[1], steps)
    revenues = _grid_revenues(inst, np.repeat(grid[:, None], inst.n, axis=1), cfg, solver)
    return float(grid[int(np.argmax(revenues))])


def brute_force_discriminatory(inst: MarketInstance, r_range: Tuple[float, float] = (0.0, 5.0),
                               steps: int = 501, cfg: Optional[SolverConfig] = None,
                               chunk: int = 200000) -> np.ndarray:
    """Oráculo (N <= 3): argmax del ingreso sobre la rejilla r_range^N."""
    if inst.n > 3:
        raise InvariantError(f"brute_force_discriminatory sólo admite N <= 3 (N={inst.n})")
    _check_range(r_range, steps)
    solver = InteractionSolver.for_instance(inst)
    axis = np.linspace(r_range[0], r_range[1], steps)
    mesh = np.meshgrid(*([axis] * inst.n), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    best_value, best_point = -np.inf, points[0]
    for start in range(0, points.shape[0], chunk):
        block = points[start:start + chunk]
        revenues = _grid_revenues(inst, block, cfg, solver)
        k = int(np.argmax(revenues))
        if revenues[k] > best_value:
            best_value, best_point = float(revenues[k]), block[k]
    return best_point.copy()


def solve_regime(inst: MarketInstance, regime: str, cfg: Optional[SolverConfig] = None,
                 exp: Optional[ExpectationProfile] = None) -> RewardSolution:
    if regime == DISCRIMINATORY:
        return discriminatory_reward(inst, cfg)
    if regime == UNIFORM:
        return uniform_reward(inst, cfg)
    if regime == UNIFORM_BOUND:
        return uniform_bound_reward(inst, exp or ExpectationProfile.from_instance(inst), cfg)
    if regime == UNIFORM_CLAMPED:
        return uniform_reward_clamped(inst, cfg)
    raise InvariantError(f"régimen desconocido: {regime!r}")
