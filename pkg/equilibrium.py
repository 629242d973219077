#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Equilibrio de participación de los usuarios móviles
===================================================
Dado un vector de recompensas r, calcula el perfil de participación x en el
que ningún MU quiere desviarse:

  - solve_br_dynamics: barridos simultáneos de mejor respuesta (válido con o
    sin participación nula).
  - solve_closed_form: resolución directa de (B - G) x = a + r - c·1, exacta
    sólo cuando el resultado es interior.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from market_core import (
    InvariantError,
    MarketInstance,
    SolverError,
    as_vector,
    check_assumption1,
    interaction_matrix,
)

logger = logging.getLogger(__name__)

BEST_RESPONSE = "best-response"
CLOSED_FORM = "closed-form"


@dataclass(frozen=True)
class SolverConfig:
    """Tolerancia L1 entre barridos consecutivos y tope de barridos."""
    epsilon: float = 1e-9
    max_iter: int = 100000
    warm_start: Optional[Tuple[float, ...]] = None
    record_trace: bool = False

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise InvariantError(f"solver.epsilon debe ser > 0 (valor {self.epsilon})")
        if int(self.max_iter) < 1:
            raise InvariantError(f"solver.max_iter debe ser >= 1 (valor {self.max_iter})")

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "SolverConfig":
        return cls(epsilon=float(doc.get("epsilon", 1e-9)), max_iter=int(doc.get("max_iter", 100000)))


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    x: np.ndarray
    method: str
    iterations: int
    interior: bool
    converged: bool
    residual: float
    assumption1: bool = True
    trace: Tuple[np.ndarray, ...] = field(default=(), repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x": self.x.tolist(),
            "method": self.method,
            "iterations": self.iterations,
            "interior": self.interior,
            "converged": self.converged,
            "residual": self.residual,
            "assumption1": self.assumption1,
        }


class InteractionSolver:
    """
    Factoriza una matriz simétrica una sola vez y resuelve sistemas con ella.
    Intenta Cholesky; si la matriz no es definida positiva recurre a LU.
    Nunca se forma la inversa explícitamente.
    """

    def __init__(self, matrix: np.ndarray, label: str = "B - G"):
        self.matrix = np.asarray(matrix, dtype=float)
        self.label = label
        self._cho = None
        self._lu = None
        try:
            self._cho = linalg.cho_factor(self.matrix, lower=True)
            self.kind = "cholesky"
        except linalg.LinAlgError:
            self.kind = "lu"
            logger.debug(f"{label} no es definida positiva, factorizando con LU")
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", linalg.LinAlgWarning)
                    lu, piv = linalg.lu_factor(self.matrix)
            except ValueError as e:
                raise SolverError(f"no se pudo factorizar {label}: {e}")
            pivots = np.abs(np.diag(lu))
            scale = max(float(np.max(np.abs(self.matrix))), 1.0)
            if pivots.size == 0 or float(pivots.min()) <= pivots.size * np.finfo(float).eps * scale:
                raise SolverError(f"{label} es singular: el sistema lineal no tiene solución única")
            self._lu = (lu, piv)
        except ValueError as e:
            raise SolverError(f"no se pudo factorizar {label}: {e}")

    @classmethod
    def for_instance(cls, inst: MarketInstance) -> "InteractionSolver":
        return cls(interaction_matrix(inst))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._cho is not None:
            return linalg.cho_solve(self._cho, rhs)
        return linalg.lu_solve(self._lu, rhs)


def best_response_vector(inst: MarketInstance, x: np.ndarray, r: np.ndarray) -> np.ndarray:
    """max{0, (r_i - c + a_i + sum_j g_ij x_j) / (2 b_i)} para todos los MU."""
    return np.maximum(0.0, (r - inst.params.c + inst.a + inst.G @ x) / (2.0 * inst.b))


def best_response(inst: MarketInstance, i: int, x: Any, r: Any) -> float:
    if not 0 <= i < inst.n:
        raise IndexError(f"MU {i} fuera de rango (N={inst.n})")
    x = as_vector(x, inst.n, "x")
    r = as_vector(r, inst.n, "r")
    value = (r[i] - inst.params.c + inst.a[i] + float(inst.G[i] @ x)) / (2.0 * inst.b[i])
    return max(0.0, float(value))


def fixed_point_residual(inst: MarketInstance, x: np.ndarray, r: np.ndarray) -> float:
    """Distancia L-infinito de x a su propia mejor respuesta."""
    with np.errstate(over="ignore", invalid="ignore"):
        gap = np.abs(x - best_response_vector(inst, x, r))
    if not np.all(np.isfinite(gap)):
        return float("inf")
    return float(gap.max())


def solve_br_dynamics(inst: MarketInstance, r: Any, cfg: Optional[SolverConfig] = None) -> EquilibriumResult:
    """
    Algoritmo de mejor respuesta simultánea.
    x^0 = 0, x^1 = (1 + eps)·1 (o warm_start); se itera hasta que la
    distancia L1 entre barridos consecutivos sea <= eps o se agote max_iter.
    Si el Supuesto 1 falla se avisa pero se intenta igualmente.
    """
    cfg = cfg or SolverConfig()
    r = as_vector(r, inst.n, "r")
    report = check_assumption1(inst)
    if not report.holds:
        logger.warning(
            f"Supuesto 1 no se cumple (margen mínimo {report.min_margin:.3f}): "
            f"la convergencia de la dinámica no está garantizada"
        )

    prev = np.zeros(inst.n)
    if cfg.warm_start is not None:
        cur = as_vector(cfg.warm_start, inst.n, "warm_start")
    else:
        cur = np.full(inst.n, 1.0 + cfg.epsilon)
    trace = [cur.copy()] if cfg.record_trace else []

    iterations = 0
    diff = float(np.sum(np.abs(cur - prev)))
    with np.errstate(over="ignore", invalid="ignore"):
        while iterations == 0 or (diff > cfg.epsilon and iterations < cfg.max_iter):
            nxt = best_response_vector(inst, cur, r)
            prev, cur = cur, nxt
            iterations += 1
            diff = float(np.sum(np.abs(cur - prev)))
            if cfg.record_trace:
                trace.append(cur.copy())
            if not np.isfinite(diff):
                logger.error("La dinámica de mejor respuesta diverge")
                break

    residual = fixed_point_residual(inst, cur, r)
    converged = bool(np.isfinite(diff) and diff <= cfg.epsilon and residual <= cfg.epsilon)
    if not converged:
        logger.warning(
            f"Dinámica de mejor respuesta sin converger tras {iterations} barridos "
            f"(paso L1 {diff:.3e}, residuo {residual:.3e})"
        )
    else:
        logger.debug(f"Dinámica convergida en {iterations} barridos (residuo {residual:.3e})")

    return EquilibriumResult(
        x=cur,
        method=BEST_RESPONSE,
        iterations=iterations,
        interior=bool(np.all(cur > 0)),
        converged=converged,
        residual=residual,
        assumption1=report.holds,
        trace=tuple(trace),
    )


def solve_closed_form(inst: MarketInstance, r: Any, cfg: Optional[SolverConfig] = None,
                      solver: Optional[InteractionSolver] = None) -> EquilibriumResult:
    """
    x = (B - G)^{-1} (a + r - c·1). Si alguna componente es <= 0 el
    resultado no es un equilibrio: se devuelve marcado como no interior.
    """
    cfg = cfg or SolverConfig()
    r = as_vector(r, inst.n, "r")
    solver = solver or InteractionSolver.for_instance(inst)
    x = solver.solve(inst.a + r - inst.params.c)
    if not np.all(np.isfinite(x)):
        raise SolverError("la solución en forma cerrada no es finita")
    interior = bool(np.all(x > 0))
    residual = fixed_point_residual(inst, x, r)
    tolerance = cfg.epsilon * max(1.0, float(np.max(np.abs(x))))
    if not interior:
        logger.debug(
            f"Forma cerrada no interior ({int(np.sum(x <= 0))} MU con x <= 0): "
            f"no es un equilibrio del juego con participación no negativa"
        )
    return EquilibriumResult(
        x=x,
        method=CLOSED_FORM,
        iterations=0,
        interior=interior,
        converged=bool(interior and residual <= tolerance),
        residual=residual,
        assumption1=check_assumption1(inst).holds,
    )


def solve_equilibrium(inst: MarketInstance, r: Any, cfg: Optional[SolverConfig] = None,
                      solver: Optional[InteractionSolver] = None) -> EquilibriumResult:
    """Forma cerrada si es interior; en otro caso, dinámica de mejor respuesta."""
    try:
        result = solve_closed_form(inst, r, cfg, solver)
    except SolverError as e:
        logger.warning(f"Forma cerrada no disponible ({e}); usando mejor respuesta")
        return solve_br_dynamics(inst, r, cfg)
    if result.interior:
        return result
    return solve_br_dynamics(inst, r, cfg)


def cross_validate(inst: MarketInstance, r: Any, cfg: Optional[SolverConfig] = None) -> float:
    """Distancia L-infinito entre la forma cerrada y la dinámica de mejor respuesta."""
    closed = solve_closed_form(inst, r, cfg)
    if not closed.interior:
        raise SolverError("la forma cerrada no es interior: la validación cruzada no aplica")
    dynamic = solve_br_dynamics(inst, r, cfg)
    return float(np.max(np.abs(closed.x - dynamic.x)))


def participation_upper_bound(inst: MarketInstance, r: Any) -> float:
    """
    Cota de max_i x_i en equilibrio bajo el Supuesto 1:
    max_i |a_i - c + r_i| / (2 b_i - sum_j g_ij). Infinito si algún
    denominador no es positivo.
    """
    r = as_vector(r, inst.n, "r")
    denom = 2.0 * inst.b - inst.G.sum(axis=1)
    if np.any(denom <= 0):
        return float("inf")
    return float(np.max(np.abs(inst.a - inst.params.c + r) / denom))


def grid_fixed_point(inst: MarketInstance, r: Any, x_max: float, steps: int) -> np.ndarray:
    """
    Oráculo de fuerza bruta (N <= 3): el punto de la rejilla [0, x_max]^N con
    menor residuo de mejor respuesta. Empates: menor índice en la rejilla.
    """
    if inst.n > 3:
        raise InvariantError(f"grid_fixed_point sólo admite N <= 3 (N={inst.n})")
    if steps < 2 or not (x_max > 0):
        raise InvariantError("la rejilla necesita steps >= 2 y x_max > 0")
    r = as_vector(r, inst.n, "r")
    axis = np.linspace(0.0, x_max, steps)
    mesh = np.meshgrid(*([axis] * inst.n), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    responses = np.maximum(
        0.0, (r - inst.params.c + inst.a + points @ inst.G.T) / (2.0 * inst.b)
    )
    residuals = np.max(np.abs(points - responses), axis=1)
    return points[int(np.argmin(residuals))]
