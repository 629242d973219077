#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Experimentos de evaluación
==========================
- sweep_n: barrido sobre el número de MU.
- sweep_social: barrido sobre la media de los lazos sociales (mu_g).
- case_study_chain: distribución de recompensas y participación en la cadena.

Cada punto del barrido se repite con semillas base_seed + réplica; las
réplicas se ejecutan en paralelo y los registros se ordenan por
(valor, semilla, régimen) antes de escribirse, de modo que dos ejecuciones
con las mismas semillas producen el mismo CSV byte a byte.
"""

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from dotenv import load_dotenv

from equilibrium import SolverConfig
from market_core import (
    InstanceFormatError,
    InvariantError,
    MarketError,
    MarketInstance,
    MarketParams,
    gross_value,
    total_mu_utility,
)
from reward_opt import (
    BASIS_EQUILIBRIUM,
    BASIS_MATRIX,
    DISCRIMINATORY,
    REGIMES,
    REVENUE_BASES,
    UNIFORM,
    UNIFORM_BOUND,
    RewardSolution,
    discriminatory_reward,
    uniform_bound_reward,
    uniform_reward,
)
from scenario import ScenarioConfig, expectation_of, generate_chain_instance, generate_random_instance

load_dotenv()

logger = logging.getLogger(__name__)

RECORD_HEADER = [
    "experiment_id", "seed", "sweep_name", "sweep_value", "regime", "revenue",
    "total_mu_utility", "total_reward_paid", "mean_reward", "interior", "converged",
]
CASE_STUDY_HEADER = [
    "index", "uniform_r", "uniform_x", "disc_r", "disc_x",
    "uniform_x_norm", "disc_r_norm", "disc_x_norm",
]

THREADS_ENV = "CROWDMARKET_THREADS"
CHAIN_PARAMS = MarketParams(c=16.0, mu=0.01, s=50.0, t=0.05)


@dataclass(frozen=True)
class ExperimentConfig:
    replicates: int = 30
    base_seed: int = 20180101
    threads: int = 0
    revenue_basis: str = BASIS_MATRIX
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise InvariantError(f"replicates debe ser >= 1 (valor {self.replicates})")
        if self.base_seed < 0:
            raise InvariantError(f"base_seed debe ser >= 0 (valor {self.base_seed})")
        if self.revenue_basis not in REVENUE_BASES:
            raise InvariantError(
                f"revenue_basis desconocida: {self.revenue_basis!r} (use {' o '.join(REVENUE_BASES)})"
            )

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], solver: Optional[SolverConfig] = None) -> "ExperimentConfig":
        return cls(
            replicates=int(doc.get("replicates", 30)),
            base_seed=int(doc.get("base_seed", 20180101)),
            threads=int(doc.get("threads", 0)),
            revenue_basis=str(doc.get("revenue_basis", BASIS_MATRIX)),
            solver=solver or SolverConfig(),
        )


@dataclass(frozen=True)
class ExperimentRecord:
    experiment_id: str
    seed: int
    sweep_name: str
    sweep_value: float
    regime: str
    revenue: float
    total_mu_utility: float
    total_reward_paid: float
    mean_reward: float
    interior: bool
    converged: bool
    gross_value: float = float("nan")

    @property
    def sort_key(self) -> Tuple[float, int, str]:
        return (self.sweep_value, self.seed, self.regime)

    def to_row(self) -> List[str]:
        return [
            self.experiment_id, str(self.seed), self.sweep_name, _fmt_float(self.sweep_value),
            self.regime, _fmt_float(self.revenue), _fmt_float(self.total_mu_utility),
            _fmt_float(self.total_reward_paid), _fmt_float(self.mean_reward),
            _fmt_bool(self.interior), _fmt_bool(self.converged),
        ]


def _fmt_float(value: float) -> str:
    return repr(float(value))


def _fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def resolve_threads(configured: int = 0) -> int:
    """Hilos efectivos: config (0 = automático) acotado por CROWDMARKET_THREADS."""
    threads = configured if configured > 0 else min(32, os.cpu_count() or 1)
    env = os.getenv(THREADS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError:
            logger.warning(f"{THREADS_ENV} no es un entero ({env!r}); se ignora")
        else:
            if cap > 0:
                threads = min(threads, cap)
    return max(1, threads)


def record_from_solution(experiment_id: str, seed: int, sweep_name: str, sweep_value: float,
                         inst: MarketInstance, sol: RewardSolution, basis: str) -> ExperimentRecord:
    """Registro de un régimen en la base de ingreso elegida."""
    if basis == BASIS_MATRIX:
        x = sol.matrix_x
        revenue = sol.matrix_revenue
        interior = sol.matrix_interior
        converged = True
    else:
        x = sol.equilibrium.x
        revenue = sol.revenue
        interior = sol.equilibrium.interior
        converged = sol.equilibrium.converged
    return ExperimentRecord(
        experiment_id=experiment_id,
        seed=seed,
        sweep_name=sweep_name,
        sweep_value=float(sweep_value),
        regime=sol.regime,
        revenue=float(revenue),
        total_mu_utility=total_mu_utility(inst, x, sol.r),
        total_reward_paid=float(sol.r @ x),
        mean_reward=sol.mean_reward,
        interior=interior,
        converged=converged,
        gross_value=gross_value(inst, x),
    )


def _failed_record(experiment_id: str, seed: int, sweep_name: str, sweep_value: float,
                   regime: str) -> ExperimentRecord:
    nan = float("nan")
    return ExperimentRecord(experiment_id, seed, sweep_name, float(sweep_value), regime,
                            nan, nan, nan, nan, False, False)


class SweepRunner:
    """
    Ejecuta un barrido: para cada valor y réplica genera una instancia y
    resuelve los tres regímenes. Los puntos se reparten en un pool de hilos;
    un fallo en un punto se registra y el barrido continúa.
    """

    def __init__(self, experiment_id: str, sweep_name: str, base_cfg: ScenarioConfig,
                 exp_cfg: Optional[ExperimentConfig] = None):
        if sweep_name not in ("n", "mu_g"):
            raise InvariantError(f"variable de barrido no soportada: {sweep_name!r}")
        self.experiment_id = experiment_id
        self.sweep_name = sweep_name
        self.base_cfg = base_cfg
        self.exp_cfg = exp_cfg or ExperimentConfig()
        self.logger = logging.getLogger(self.__class__.__name__)

    def _scenario_for(self, value: float, seed: int) -> ScenarioConfig:
        if self.sweep_name == "n":
            return self.base_cfg.with_changes(n=int(value), seed=seed)
        return self.base_cfg.with_changes(mu_g=float(value), seed=seed)

    def run_point(self, value: float, seed: int) -> List[ExperimentRecord]:
        """Las tres filas (una por régimen) de un valor y una semilla."""
        try:
            cfg = self._scenario_for(value, seed)
            inst = generate_random_instance(cfg)
            exp = expectation_of(cfg)
        except MarketError as e:
            self.logger.error(f"Error generando la instancia ({self.sweep_name}={value}, seed={seed}): {e}",
                              exc_info=True)
            return [_failed_record(self.experiment_id, seed, self.sweep_name, value, regime)
                    for regime in REGIMES]

        solvers = {
            DISCRIMINATORY: lambda: discriminatory_reward(inst, self.exp_cfg.solver),
            UNIFORM: lambda: uniform_reward(inst, self.exp_cfg.solver),
            UNIFORM_BOUND: lambda: uniform_bound_reward(inst, exp, self.exp_cfg.solver),
        }
        records = []
        for regime, solve in solvers.items():
            try:
                sol = solve()
                records.append(record_from_solution(self.experiment_id, seed, self.sweep_name, value,
                                                    inst, sol, self.exp_cfg.revenue_basis))
            except MarketError as e:
                self.logger.error(f"Error en {regime} ({self.sweep_name}={value}, seed={seed}): {e}",
                                  exc_info=True)
                records.append(_failed_record(self.experiment_id, seed, self.sweep_name, value, regime))
        return records

    def run(self, values: Sequence[float]) -> List[ExperimentRecord]:
        if not values:
            raise InvariantError("el barrido necesita al menos un valor")
        tasks = [(value, self.exp_cfg.base_seed + rep)
                 for value in values for rep in range(self.exp_cfg.replicates)]
        workers = min(resolve_threads(self.exp_cfg.threads), len(tasks))
        self.logger.info(
            f"Barrido {self.experiment_id}: {len(values)} valores de {self.sweep_name} x "
            f"{self.exp_cfg.replicates} réplicas ({workers} hilos, base {self.exp_cfg.revenue_basis})"
        )

        records: List[ExperimentRecord] = []
        with ThreadPoolExecutor(max_workers=workers) as executor:
            future_to_task = {executor.submit(self.run_point, value, seed): (value, seed)
                              for value, seed in tasks}
            for future in as_completed(future_to_task):
                value, seed = future_to_task[future]
                try:
                    records.extend(future.result())
                except Exception as e:
                    self.logger.error(f"Excepción en el punto {self.sweep_name}={value}, seed={seed}: {e}",
                                      exc_info=True)
                    records.extend(_failed_record(self.experiment_id, seed, self.sweep_name, value, regime)
                                   for regime in REGIMES)

        records.sort(key=lambda rec: rec.sort_key)
        if self.exp_cfg.revenue_basis == BASIS_MATRIX:
            outside = sum(1 for rec in records if not rec.interior and not math.isnan(rec.revenue))
            if outside:
                self.logger.warning(
                    f"{outside} de {len(records)} filas en base matricial tienen participación <= 0: "
                    f"describen la forma matricial, no un resultado del juego (interior=false)"
                )
        return records


def _as_count(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)) \
            or not float(value).is_integer():
        raise InstanceFormatError(f"el número de MU debe ser entero (valor {value!r})")
    return int(value)


def sweep_n(base_cfg: ScenarioConfig, n_values: Sequence[int], replicates: Optional[int] = None,
            exp_cfg: Optional[ExperimentConfig] = None) -> List[ExperimentRecord]:
    exp_cfg = exp_cfg or ExperimentConfig()
    if replicates is not None:
        exp_cfg = replace(exp_cfg, replicates=replicates)
    return SweepRunner("sweep-n", "n", base_cfg, exp_cfg).run([_as_count(v) for v in n_values])


def sweep_social(base_cfg: ScenarioConfig, mu_g_values: Sequence[float], replicates: Optional[int] = None,
                 exp_cfg: Optional[ExperimentConfig] = None) -> List[ExperimentRecord]:
    exp_cfg = exp_cfg or ExperimentConfig()
    if replicates is not None:
        exp_cfg = replace(exp_cfg, replicates=replicates)
    return SweepRunner("sweep-social", "mu_g", base_cfg, exp_cfg).run([float(v) for v in mu_g_values])


def summarize(records: Sequence[ExperimentRecord]) -> List[Dict[str, Any]]:
    """Medias por (valor, régimen), ignorando filas fallidas."""
    groups: Dict[Tuple[float, str], List[ExperimentRecord]] = {}
    for rec in records:
        groups.setdefault((rec.sweep_value, rec.regime), []).append(rec)
    summary = []
    for (value, regime), group in sorted(groups.items()):
        ok = [rec for rec in group if not math.isnan(rec.revenue)]
        summary.append({
            "sweep_value": value,
            "regime": regime,
            "count": len(ok),
            "failed": len(group) - len(ok),
            "revenue": float(np.mean([rec.revenue for rec in ok])) if ok else float("nan"),
            "total_mu_utility": float(np.mean([rec.total_mu_utility for rec in ok])) if ok else float("nan"),
            "total_reward_paid": float(np.mean([rec.total_reward_paid for rec in ok])) if ok else float("nan"),
            "mean_reward": float(np.mean([rec.mean_reward for rec in ok])) if ok else float("nan"),
        })
    return summary


def check_trends(records: Sequence[ExperimentRecord]) -> List[str]:
    """
    Tendencias esperadas sobre las medias: ingreso y utilidad total no
    decrecientes con el valor barrido, y orden discriminatorio >= uniforme >= cota.
    Devuelve una descripción por cada incumplimiento.
    """
    means = {(row["sweep_value"], row["regime"]): row for row in summarize(records)}
    values = sorted({value for value, _ in means})
    problems = []
    for regime in REGIMES:
        for metric in ("revenue", "total_mu_utility"):
            series = [(v, means[(v, regime)][metric]) for v in values if (v, regime) in means]
            for (before_v, before), (after_v, after) in zip(series, series[1:]):
                if after < before:
                    problems.append(f"{regime}: {metric} medio baja de {before:.6f} a {after:.6f} "
                                    f"({before_v:g} -> {after_v:g})")
    for v in values:
        if not all((v, regime) in means for regime in REGIMES):
            continue
        revenue = [means[(v, regime)]["revenue"] for regime in REGIMES]
        for regime, higher, lower in zip(REGIMES[1:], revenue, revenue[1:]):
            if lower > higher + 1e-9:
                problems.append(f"{v:g}: ingreso medio de {regime} ({lower:.6f}) por encima del régimen anterior "
                                f"({higher:.6f})")
    return problems


def write_records_csv(records: Sequence[ExperimentRecord], out: TextIO):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RECORD_HEADER)
    for rec in records:
        writer.writerow(rec.to_row())


def records_to_csv(records: Sequence[ExperimentRecord]) -> str:
    buffer = io.StringIO()
    write_records_csv(records, buffer)
    return buffer.getvalue()


# ─────────────────────────────────────────────────────────
# Caso de estudio: cadena
# ─────────────────────────────────────────────────────────

def normalize_series(values: np.ndarray) -> np.ndarray:
    """Divide por el mayor valor absoluto: el signo se conserva y todo queda en [-1, 1]."""
    values = np.asarray(values, dtype=float)
    peak = float(np.max(np.abs(values)))
    if peak == 0:
        return np.zeros_like(values)
    return values / peak


@dataclass(frozen=True, eq=False)
class CaseStudyResult:
    instance: MarketInstance
    uniform: RewardSolution
    discriminatory: RewardSolution
    basis: str
    uniform_x: np.ndarray
    disc_x: np.ndarray

    @property
    def uniform_r(self) -> np.ndarray:
        return self.uniform.r

    @property
    def disc_r(self) -> np.ndarray:
        return self.discriminatory.r

    @property
    def participation_peak(self) -> int:
        """Índice (desde 1) del MU con mayor participación uniforme, sobre los valores sin normalizar."""
        return int(np.argmax(self.uniform_x)) + 1

    @property
    def uniform_x_norm(self) -> np.ndarray:
        return normalize_series(self.uniform_x)

    @property
    def disc_r_norm(self) -> np.ndarray:
        return normalize_series(self.disc_r)

    @property
    def disc_x_norm(self) -> np.ndarray:
        return normalize_series(self.disc_x)

    def rows(self) -> List[List[str]]:
        columns = (self.uniform_r, self.uniform_x, self.disc_r, self.disc_x,
                   self.uniform_x_norm, self.disc_r_norm, self.disc_x_norm)
        return [[str(i + 1)] + [_fmt_float(col[i]) for col in columns] for i in range(self.instance.n)]


def case_study_chain(n: int = 51, params: MarketParams = CHAIN_PARAMS, a: float = 15.0, b: float = 0.1,
                     solver: Optional[SolverConfig] = None, basis: str = BASIS_MATRIX) -> CaseStudyResult:
    """
    Regímenes uniforme y discriminatorio sobre la cadena. La participación
    se toma en la base pedida; por defecto la matricial, que es la que
    muestra la forma de la distribución aunque no sea interior.
    """
    if basis not in REVENUE_BASES:
        raise InvariantError(f"base desconocida: {basis!r}")
    inst = generate_chain_instance(n, params, a, b)
    report_margin = float(np.min(1.0 - inst.G.sum(axis=1) / (2.0 * inst.b)))
    logger.info(f"Cadena N={n}: margen mínimo del Supuesto 1 = {report_margin:.6f}")

    uniform = uniform_reward(inst, solver)
    disc = discriminatory_reward(inst, solver)
    pick = (lambda sol: sol.matrix_x) if basis == BASIS_MATRIX else (lambda sol: sol.equilibrium.x)
    for sol in (uniform, disc):
        if basis == BASIS_EQUILIBRIUM and not sol.equilibrium.converged:
            logger.warning(f"Caso de estudio: la dinámica no convergió en el régimen {sol.regime}")
    return CaseStudyResult(inst, uniform, disc, basis, pick(uniform), pick(disc))


def write_case_study_csv(result: CaseStudyResult, out: TextIO):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CASE_STUDY_HEADER)
    writer.writerows(result.rows())
