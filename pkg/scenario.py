#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Generación determinista de escenarios
=====================================
- Redes sociales aleatorias con parámetros normales (a, b, g).
- Grafo en cadena del caso de estudio con pesos cuadráticos.

Semillas: SeedSequence(seed).spawn(3) -> tres flujos PCG64 independientes,
en este orden: a, b, g. El mismo seed produce siempre la misma instancia, y
al variar sólo mu_g los sorteos de a, b y de la parte aleatoria de g se
conservan (números aleatorios comunes entre puntos de un barrido).

Las "varianzas" del perfil son varianzas, no desviaciones típicas.
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Tuple, Union

import numpy as np
from scipy import stats

from market_core import (
    InstanceFormatError,
    InvariantError,
    MarketInstance,
    MarketParams,
    MuProfile,
    SocialGraph,
    params_from_dict,
    read_json_document,
)
from reward_opt import ExpectationProfile

logger = logging.getLogger(__name__)

ASSUMPTION1_TARGET = 0.99
MAX_RESAMPLE = 1000
DEFAULT_PARAMS = MarketParams(c=16.0, mu=0.01, s=20.0, t=0.05)

_INT_FIELDS = ("n", "seed")
_REAL_FIELDS = ("mu_a", "sigma2_a", "mu_b", "sigma2_b", "mu_g", "sigma2_g", "b_floor")
_IGNORED_KEYS = ("name", "description")


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 100
    mu_a: float = 15.0
    sigma2_a: float = 2.5
    mu_b: float = 15.0
    sigma2_b: float = 2.5
    mu_g: float = 0.1
    sigma2_g: float = 1.0
    params: MarketParams = field(default_factory=lambda: DEFAULT_PARAMS)
    seed: int = 0
    b_floor: float = 0.5
    enforce_assumption1: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise InvariantError(f"n debe ser >= 1 (n={self.n})")
        for name in ("sigma2_a", "sigma2_b", "sigma2_g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvariantError(f"{name} debe ser una varianza >= 0 (valor {value})")
        for name in ("mu_a", "mu_b", "mu_g"):
            if not math.isfinite(getattr(self, name)):
                raise InvariantError(f"{name}: valor no finito")
        if not self.b_floor > 0:
            raise InvariantError(f"b_floor debe ser > 0 (valor {self.b_floor})")
        if not 0 <= self.seed < 2 ** 64:
            raise InvariantError(f"seed debe ser un entero de 64 bits sin signo (valor {self.seed})")

    def with_changes(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["params"] = self.params.to_dict()
        return doc


def scenario_from_dict(doc: Any) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise InstanceFormatError("el perfil de escenario debe ser un objeto JSON")
    values: Dict[str, Any] = {}
    for key, value in doc.items():
        if key in _IGNORED_KEYS:
            continue
        if key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise InstanceFormatError(f"{key}: se esperaba un entero, recibido {value!r}")
            values[key] = value
        elif key in _REAL_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InstanceFormatError(f"{key}: se esperaba un número, recibido {value!r}")
            values[key] = float(value)
        elif key == "enforce_assumption1":
            if not isinstance(value, bool):
                raise InstanceFormatError(f"{key}: se esperaba true/false, recibido {value!r}")
            values[key] = value
        elif key == "params":
            values[key] = params_from_dict(value)
        else:
            raise InstanceFormatError(f"clave desconocida en el perfil de escenario: '{key}'")
    return ScenarioConfig(**values)


def load_scenario(source: Union[str, Dict[str, Any]]) -> ScenarioConfig:
    doc = read_json_document(source) if isinstance(source, (str, os.PathLike)) else source
    return scenario_from_dict(doc)


def _streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(3)
    rng_a, rng_b, rng_g = (np.random.Generator(np.random.PCG64(child)) for child in children)
    return rng_a, rng_b, rng_g


def sample_b(cfg: ScenarioConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """b_i ~ N(mu_b, sigma2_b), volviendo a muestrear los valores < b_floor."""
    sd = math.sqrt(cfg.sigma2_b)
    values = cfg.mu_b + sd * rng.standard_normal(n)
    low = values < cfg.b_floor
    attempts = 0
    while low.any():
        if attempts >= MAX_RESAMPLE:
            raise InvariantError(
                f"no se pudo muestrear b >= {cfg.b_floor} tras {MAX_RESAMPLE} intentos "
                f"(mu_b={cfg.mu_b}, sigma2_b={cfg.sigma2_b})"
            )
        values[low] = cfg.mu_b + sd * rng.standard_normal(int(low.sum()))
        low = values < cfg.b_floor
        attempts += 1
    return values


def generate_random_instance(cfg: ScenarioConfig) -> MarketInstance:
    rng_a, rng_b, rng_g = _streams(cfg.seed)
    n = cfg.n

    a = np.maximum(0.0, cfg.mu_a + math.sqrt(cfg.sigma2_a) * rng_a.standard_normal(n))
    b = sample_b(cfg, rng_b, n)

    upper = np.triu_indices(n, k=1)
    ties = cfg.mu_g + math.sqrt(cfg.sigma2_g) * rng_g.standard_normal(upper[0].size)
    weights = np.zeros((n, n))
    weights[upper] = np.maximum(0.0, ties)
    weights = weights + weights.T

    scale = 1.0
    if cfg.enforce_assumption1 and n > 1:
        worst = float(np.max(weights.sum(axis=1) / (2.0 * b)))
        if worst > ASSUMPTION1_TARGET:
            scale = ASSUMPTION1_TARGET / worst
            weights = weights * scale
            logger.info(f"Grafo social reescalado por {scale:.6f} (cociente máximo {worst:.4f})")

    profiles = tuple(MuProfile(float(ai), float(bi)) for ai, bi in zip(a, b))
    return MarketInstance(profiles, SocialGraph(weights, scale=scale), cfg.params)


def chain_weight(i: int, n: int) -> float:
    """Peso del enlace (i, i+1), con i empezando en 1."""
    return 0.2 * (0.5 - (0.5 - (i - 1) / n) ** 2)


def generate_chain_instance(n: int, params: MarketParams, a: float, b: float) -> MarketInstance:
    if n < 2:
        raise InvariantError(f"la cadena necesita al menos 2 MU (n={n})")
    weights = np.zeros((n, n))
    for i in range(1, n):
        w = chain_weight(i, n)
        weights[i - 1, i] = w
        weights[i, i - 1] = w
    profiles = tuple(MuProfile(float(a), float(b)) for _ in range(n))
    return MarketInstance(profiles, SocialGraph(weights), params)


def expected_clamped_normal(mean: float, var: float) -> float:
    """E[max(0, X)] con X ~ N(mean, var)."""
    if var == 0:
        return max(mean, 0.0)
    sd = math.sqrt(var)
    z = mean / sd
    return float(mean * stats.norm.cdf(z) + sd * stats.norm.pdf(z))


def expected_truncated_normal(mean: float, var: float, floor: float) -> float:
    """E[X | X >= floor] con X ~ N(mean, var): la media del muestreo con rechazo."""
    if var == 0:
        if mean < floor:
            raise InvariantError(f"distribución degenerada por debajo del suelo ({mean} < {floor})")
        return float(mean)
    sd = math.sqrt(var)
    return float(stats.truncnorm.mean((floor - mean) / sd, np.inf, loc=mean, scale=sd))


def expectation_of(cfg: ScenarioConfig) -> ExpectationProfile:
    """Medias de a (recortada en 0) y b (truncada en b_floor), en forma cerrada."""
    return ExpectationProfile(
        e_a=expected_clamped_normal(cfg.mu_a, cfg.sigma2_a),
        e_b=expected_truncated_normal(cfg.mu_b, cfg.sigma2_b, cfg.b_floor),
    )
