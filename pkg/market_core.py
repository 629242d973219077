#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Núcleo del mercado de crowdsensing
==================================
Tipos del mercado (usuarios móviles, red social, parámetros del proveedor),
utilidad de cada usuario, ingreso del proveedor y comprobaciones de validez
(Supuestos 1 y 2, definición positiva de B - G).

Formato de instancia (JSON):
    {
        "profiles": [{"a": 2.0, "b": 1.0}, ...],
        "graph": [[0.0, 0.5], [0.5, 0.0]],
        "params": {"c": 1.0, "mu": 1.0, "s": 4.0, "t": 1.0}
    }
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
PD_TOL = 1e-10

# Vectores de recompensa y de participación: arrays float de longitud N.
RewardVector = np.ndarray
ParticipationProfile = np.ndarray


class MarketError(Exception):
    """Error base del simulador."""


class InstanceFormatError(MarketError, ValueError):
    """Documento mal formado: JSON inválido, claves ausentes o tipos erróneos."""


class InvariantError(MarketError, ValueError):
    """Una invariante del mercado no se cumple."""


class SolverError(MarketError, RuntimeError):
    """Fallo numérico (factorización singular, sistema no resoluble)."""


def _check_real(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
        raise InstanceFormatError(f"{where}: se esperaba un número, recibido {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise InvariantError(f"{where}: valor no finito ({value})")
    return value


@dataclass(frozen=True)
class MuProfile:
    """Coeficientes intrínsecos de un usuario móvil: a*x - b*x^2."""
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise InvariantError(f"coeficientes no finitos (a={self.a}, b={self.b})")
        if self.a < 0:
            raise InvariantError(f"a debe ser >= 0 (a={self.a})")
        if self.b <= 0:
            raise InvariantError(f"b debe ser > 0 (b={self.b})")

    def to_dict(self) -> Dict[str, float]:
        return {"a": self.a, "b": self.b}


@dataclass(frozen=True, eq=False)
class SocialGraph:
    """
    Matriz de influencia recíproca G (g_ij = influencia de j sobre i).
    Simétrica, diagonal nula y no negativa; se rechaza en lugar de corregirse.
    `scale` es el factor ya aplicado a los pesos (1 para grafos escritos a mano).
    """
    weights: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvariantError(f"graph debe ser una matriz cuadrada (forma {w.shape})")
        n = w.shape[0]
        bad = np.argwhere(~np.isfinite(w))
        if bad.size:
            i, j = bad[0]
            raise InvariantError(f"graph[{i}][{j}]: valor no finito")
        for i in range(n):
            if w[i, i] != 0.0:
                raise InvariantError(f"graph[{i}][{i}]: la diagonal debe ser 0 (valor {w[i, i]})")
        bad = np.argwhere(w < 0)
        if bad.size:
            i, j = bad[0]
            raise InvariantError(f"graph[{i}][{j}]: peso negativo ({w[i, j]})")
        bad = np.argwhere(np.abs(w - w.T) > SYMMETRY_TOL)
        if bad.size:
            i, j = bad[0]
            raise InvariantError(
                f"graph[{i}][{j}] != graph[{j}][{i}] ({w[i, j]} vs {w[j, i]}): "
                f"los lazos sociales deben ser recíprocos"
            )
        if not (0 < self.scale <= 1):
            raise InvariantError(f"graph_scale debe estar en (0, 1] (valor {self.scale})")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def empty(cls, n: int) -> "SocialGraph":
        return cls(np.zeros((n, n)))


def symmetrize(weights: Union[Sequence[Sequence[float]], np.ndarray]) -> SocialGraph:
    """Promedia W y W^T, anula la diagonal y recorta negativos a 0."""
    w = np.array(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InvariantError(f"graph debe ser una matriz cuadrada (forma {w.shape})")
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    return SocialGraph(np.maximum(w, 0.0))


@dataclass(frozen=True)
class MarketParams:
    """Coste unitario c, conversión monetaria mu y coeficientes s, t del ingreso."""
    c: float
    mu: float
    s: float
    t: float

    def __post_init__(self):
        for name in ("c", "mu", "s", "t"):
            if not math.isfinite(getattr(self, name)):
                raise InvariantError(f"params.{name}: valor no finito")
        if self.c < 0:
            raise InvariantError(f"params.c debe ser >= 0 (c={self.c})")
        for name in ("mu", "s", "t"):
            if getattr(self, name) <= 0:
                raise InvariantError(f"params.{name} debe ser > 0 ({name}={getattr(self, name)})")

    def to_dict(self) -> Dict[str, float]:
        return {"c": self.c, "mu": self.mu, "s": self.s, "t": self.t}


@dataclass(frozen=True, eq=False)
class MarketInstance:
    """Mercado completo: perfiles de los MU, grafo social y parámetros."""
    profiles: Tuple[MuProfile, ...]
    graph: SocialGraph
    params: MarketParams
    _a: np.ndarray = field(init=False, repr=False)
    _b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        profiles = tuple(self.profiles)
        if not profiles:
            raise InvariantError("profiles: el mercado necesita al menos un MU")
        if self.graph.n != len(profiles):
            raise InvariantError(
                f"graph es {self.graph.n}x{self.graph.n} pero hay {len(profiles)} perfiles"
            )
        a = np.array([p.a for p in profiles], dtype=float)
        b = np.array([p.b for p in profiles], dtype=float)
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "profiles", profiles)
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_b", b)

    @classmethod
    def from_arrays(cls, a: Sequence[float], b: Sequence[float],
                    weights: Union[Sequence[Sequence[float]], np.ndarray],
                    params: MarketParams, scale: float = 1.0) -> "MarketInstance":
        if len(a) != len(b):
            raise InvariantError(f"a tiene longitud {len(a)} y b longitud {len(b)}")
        profiles = tuple(MuProfile(float(ai), float(bi)) for ai, bi in zip(a, b))
        return cls(profiles, SocialGraph(np.asarray(weights, dtype=float), scale=scale), params)

    @property
    def n(self) -> int:
        return len(self.profiles)

    @property
    def a(self) -> np.ndarray:
        return self._a

    @property
    def b(self) -> np.ndarray:
        return self._b

    @property
    def G(self) -> np.ndarray:
        return self.graph.weights

    def to_dict(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "profiles": [p.to_dict() for p in self.profiles],
            "graph": self.graph.weights.tolist(),
            "params": self.params.to_dict(),
        }
        if self.graph.scale != 1.0:
            doc["graph_scale"] = self.graph.scale
        return doc


@dataclass(frozen=True, eq=False)
class MarketShape:
    """Lo que el proveedor conoce con información incompleta: N, G y parámetros."""
    n: int
    graph: SocialGraph
    params: MarketParams


def shape_of(inst: MarketInstance) -> MarketShape:
    return MarketShape(inst.n, inst.graph, inst.params)


def as_vector(values: Any, n: int, name: str) -> np.ndarray:
    """Convierte a vector float y comprueba la longitud frente a N."""
    vec = np.atleast_1d(np.asarray(values, dtype=float))
    if vec.ndim != 1:
        raise InvariantError(f"{name} debe ser un vector (forma {vec.shape})")
    if vec.shape[0] != n:
        raise InvariantError(f"{name} tiene longitud {vec.shape[0]} pero la instancia tiene N={n}")
    if not np.all(np.isfinite(vec)):
        raise InvariantError(f"{name} contiene valores no finitos")
    return vec


def as_profile(inst: MarketInstance, x: Any) -> ParticipationProfile:
    """Perfil de participación válido: longitud N y entradas no negativas."""
    vec = as_vector(x, inst.n, "x")
    bad = np.flatnonzero(vec < 0)
    if bad.size:
        raise InvariantError(f"x[{bad[0]}]: nivel de participación negativo ({vec[bad[0]]})")
    return vec


def _check_index(inst: MarketInstance, i: int):
    if not 0 <= i < inst.n:
        raise IndexError(f"MU {i} fuera de rango (N={inst.n})")


def mu_utility(inst: MarketInstance, i: int, x: Any, r: Any) -> float:
    """u_i = a_i x_i - b_i x_i^2 + sum_j g_ij x_i x_j + r_i x_i - c x_i."""
    _check_index(inst, i)
    x = as_vector(x, inst.n, "x")
    r = as_vector(r, inst.n, "r")
    xi = x[i]
    social = float(inst.G[i] @ x)
    return float(inst.a[i] * xi - inst.b[i] * xi ** 2 + social * xi + r[i] * xi - inst.params.c * xi)


def mu_utilities(inst: MarketInstance, x: Any, r: Any) -> np.ndarray:
    x = as_vector(x, inst.n, "x")
    r = as_vector(r, inst.n, "r")
    return inst.a * x - inst.b * x ** 2 + (inst.G @ x) * x + r * x - inst.params.c * x


def total_mu_utility(inst: MarketInstance, x: Any, r: Any) -> float:
    return float(np.sum(mu_utilities(inst, x, r)))


def gross_value(inst: MarketInstance, x: Any) -> float:
    """mu * sum_i (s x_i - t x_i^2): valor de la participación antes de pagar."""
    x = as_vector(x, inst.n, "x")
    p = inst.params
    return float(p.mu * np.sum(p.s * x - p.t * x ** 2))


def csp_revenue(inst: MarketInstance, x: Any, r: Any) -> float:
    """Pi = mu * sum_i (s x_i - t x_i^2) - sum_i r_i x_i."""
    x = as_vector(x, inst.n, "x")
    r = as_vector(r, inst.n, "r")
    return gross_value(inst, x) - float(r @ x)


@dataclass(frozen=True)
class Assumption1Report:
    holds: bool
    margins: Tuple[float, ...]

    @property
    def min_margin(self) -> float:
        return min(self.margins)


@dataclass(frozen=True)
class DefinitenessReport:
    holds: bool
    min_eigenvalue: float


def assumption1_ratios(inst: MarketInstance) -> np.ndarray:
    return inst.G.sum(axis=1) / (2.0 * inst.b)


def check_assumption1(inst: MarketInstance) -> Assumption1Report:
    """sum_j g_ij / (2 b_i) < 1 para todo i; margen = 1 - ese cociente."""
    margins = 1.0 - assumption1_ratios(inst)
    return Assumption1Report(bool(np.all(margins > 0)), tuple(float(m) for m in margins))


def check_assumption2(inst: MarketInstance) -> bool:
    """c >= media(a) + mu*s (frontera incluida)."""
    p = inst.params
    return bool(p.c >= float(np.mean(inst.a)) + p.mu * p.s)


def interaction_matrix(inst: MarketInstance) -> np.ndarray:
    """B - G con B = diag(2 b_i)."""
    return np.diag(2.0 * inst.b) - inst.G


def gershgorin_bound(inst: MarketInstance) -> float:
    """Cota inferior de Gershgorin del espectro de B - G."""
    return float(np.min(2.0 * inst.b - inst.G.sum(axis=1)))


def is_diagonally_dominant(inst: MarketInstance) -> bool:
    m = interaction_matrix(inst)
    off = np.abs(m).sum(axis=1) - np.abs(np.diag(m))
    return bool(np.all(np.diag(m) > off))


def check_positive_definite(inst: MarketInstance) -> DefinitenessReport:
    eigenvalues = linalg.eigvalsh(interaction_matrix(inst))
    smallest = float(eigenvalues[0])
    return DefinitenessReport(smallest > PD_TOL, smallest)


# ─────────────────────────────────────────────────────────
# Lectura / escritura de documentos JSON
# ─────────────────────────────────────────────────────────

def read_json_document(path: str) -> Any:
    """Lee un documento JSON; los errores de sintaxis indican línea y columna."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise InstanceFormatError(f"No se encontró el archivo {path}")
    except json.JSONDecodeError as e:
        raise InstanceFormatError(f"JSON inválido en {path} (línea {e.lineno}, columna {e.colno}): {e.msg}")
    except OSError as e:
        raise InstanceFormatError(f"No se pudo leer {path}: {e}")


def _require(doc: Dict[str, Any], key: str, where: str) -> Any:
    if not isinstance(doc, dict):
        raise InstanceFormatError(f"{where}: se esperaba un objeto JSON")
    if key not in doc:
        raise InstanceFormatError(f"falta la clave '{where}.{key}'" if where else f"falta la clave '{key}'")
    return doc[key]


def params_from_dict(doc: Any, where: str = "params") -> MarketParams:
    if not isinstance(doc, dict):
        raise InstanceFormatError(f"{where}: se esperaba un objeto con c, mu, s, t")
    values = {k: _check_real(_require(doc, k, where), f"{where}.{k}") for k in ("c", "mu", "s", "t")}
    return MarketParams(**values)


def instance_from_dict(doc: Any) -> MarketInstance:
    """Construye y valida una instancia; informa de la primera violación con coordenadas."""
    if not isinstance(doc, dict):
        raise InstanceFormatError("la instancia debe ser un objeto JSON")
    raw_profiles = _require(doc, "profiles", "")
    if not isinstance(raw_profiles, list):
        raise InstanceFormatError("profiles debe ser una lista de {a, b}")
    profiles: List[MuProfile] = []
    for i, entry in enumerate(raw_profiles):
        where = f"profiles[{i}]"
        a = _check_real(_require(entry, "a", where), f"{where}.a")
        b = _check_real(_require(entry, "b", where), f"{where}.b")
        try:
            profiles.append(MuProfile(a, b))
        except InvariantError as e:
            raise InvariantError(f"{where}: {e}")

    raw_graph = _require(doc, "graph", "")
    if not isinstance(raw_graph, list) or not all(isinstance(row, list) for row in raw_graph):
        raise InstanceFormatError("graph debe ser una matriz densa (lista de filas)")
    for i, row in enumerate(raw_graph):
        if len(row) != len(raw_graph):
            raise InvariantError(f"graph[{i}] tiene {len(row)} columnas, se esperaban {len(raw_graph)}")
        for j, value in enumerate(row):
            _check_real(value, f"graph[{i}][{j}]")
    scale = doc.get("graph_scale", 1.0)
    scale = _check_real(scale, "graph_scale")
    graph = SocialGraph(np.array(raw_graph, dtype=float).reshape(len(raw_graph), len(raw_graph)), scale=scale)

    params = params_from_dict(_require(doc, "params", ""))
    return MarketInstance(tuple(profiles), graph, params)


def load_instance(source: Union[str, Dict[str, Any]]) -> MarketInstance:
    doc = read_json_document(source) if isinstance(source, (str, os.PathLike)) else source
    return instance_from_dict(doc)


def dump_instance(inst: MarketInstance, path: Optional[str] = None) -> str:
    text = json.dumps(inst.to_dict(), indent=2)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    return text


def load_reward(source: Union[str, Dict[str, Any], List[float]], n: Optional[int] = None) -> RewardVector:
    """Archivo de recompensas: {"r": [...]} o directamente una lista."""
    doc = read_json_document(source) if isinstance(source, (str, os.PathLike)) else source
    raw = doc.get("r") if isinstance(doc, dict) else doc
    if not isinstance(raw, list):
        raise InstanceFormatError("el archivo de recompensas debe contener una lista 'r'")
    values = [_check_real(v, f"r[{i}]") for i, v in enumerate(raw)]
    if n is not None:
        return as_vector(values, n, "r")
    return np.array(values, dtype=float)
