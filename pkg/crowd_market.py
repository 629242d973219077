#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Mercado de crowdsensing - Línea de comandos
===========================================
Subcomandos:
    check          Supuestos 1 y 2, definición positiva de B - G
    solve          Equilibrio para un vector de recompensas (ambos métodos)
    optimize       Recompensa óptima (--regime disc | uniform | bound | uniform-clamped)
    sweep-n        Barrido sobre el número de MU (CSV)
    sweep-social   Barrido sobre la media de los lazos sociales (CSV)
    case-study     Caso de estudio de la cadena (CSV)
    scenario-dump  Instancia generada desde un perfil de escenario (JSON)
    oracle         Comparación con búsquedas de fuerza bruta

Códigos de salida: 0 ok, 2 formato, 3 invariante, 4 solver, 1 otros.
"""

import argparse
import copy
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from equilibrium import SolverConfig, cross_validate, solve_br_dynamics, solve_closed_form
from experiments import (
    CHAIN_PARAMS,
    ExperimentConfig,
    case_study_chain,
    check_trends,
    summarize,
    sweep_n,
    sweep_social,
    write_case_study_csv,
    write_records_csv,
)
from market_core import (
    InstanceFormatError,
    InvariantError,
    MarketError,
    MarketInstance,
    SolverError,
    check_assumption1,
    check_assumption2,
    check_positive_definite,
    dump_instance,
    gershgorin_bound,
    instance_from_dict,
    is_diagonally_dominant,
    load_reward,
    params_from_dict,
    read_json_document,
)
from reward_opt import (
    DISCRIMINATORY,
    UNIFORM,
    UNIFORM_BOUND,
    UNIFORM_CLAMPED,
    ExpectationProfile,
    brute_force_discriminatory,
    brute_force_uniform,
    solve_regime,
)
from scenario import expectation_of, generate_random_instance, scenario_from_dict

SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))

DEFAULT_CONFIG: Dict[str, Any] = {
    "logging": {"level": "INFO", "file": ""},
    "solver": {"epsilon": 1e-9, "max_iter": 100000},
    "experiments": {
        "replicates": 30,
        "base_seed": 20180101,
        "threads": 0,
        "revenue_basis": "matrix",
        "profiles_dir": "profiles",
    },
    "case_study": {"n": 51, "a": 15.0, "b": 0.1, "basis": "matrix", "params": CHAIN_PARAMS.to_dict()},
}

REGIME_FLAGS = {
    "disc": DISCRIMINATORY,
    "uniform": UNIFORM,
    "bound": UNIFORM_BOUND,
    "uniform-clamped": UNIFORM_CLAMPED,
}
DEFAULT_SWEEP_VALUES = {"sweep-n": [25, 50, 75, 100], "sweep-social": [0.05, 0.1, 0.15, 0.2]}
ORACLE_DISC_STEPS = {1: 5001, 2: 501, 3: 101}

EXIT_FORMAT = 2
EXIT_INVARIANT = 3
EXIT_SOLVER = 4

logger = logging.getLogger("crowd_market")


def _force_utf8_stdio():
    """Fuerza UTF-8 en stdout/stderr (consolas Windows antiguas)."""
    for stream in (sys.stdout, sys.stderr):
        encoding = (getattr(stream, "encoding", None) or "").lower()
        if encoding not in ("utf-8", "utf8") and hasattr(stream, "reconfigure"):
            stream.reconfigure(encoding="utf-8", errors="replace")


# ─────────────────────────────────────────────────────────
# Configuración
# ─────────────────────────────────────────────────────────

def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_runtime_config(config_path: str) -> Tuple[Dict[str, Any], Optional[str]]:
    """
    Carga config.json sobre los valores por defecto. Reintenta la lectura
    (el archivo puede estar editándose). Devuelve (config, aviso pendiente).
    """
    if not os.path.exists(config_path):
        return copy.deepcopy(DEFAULT_CONFIG), f"No existe {config_path}; usando la configuración por defecto"

    last_error: Optional[Exception] = None
    for _ in range(3):
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                doc = json.load(f)
            if not isinstance(doc, dict):
                raise InstanceFormatError(f"{config_path}: la configuración debe ser un objeto JSON")
            return _merge(DEFAULT_CONFIG, doc), None
        except InstanceFormatError:
            raise
        except json.JSONDecodeError as e:
            last_error = InstanceFormatError(
                f"JSON inválido en {config_path} (línea {e.lineno}, columna {e.colno}): {e.msg}"
            )
        except OSError as e:
            last_error = InstanceFormatError(f"No se pudo leer {config_path}: {e}")
        time.sleep(0.1)
    raise last_error


def setup_logging(config: Dict[str, Any]):
    log_config = config.get("logging", {})
    level_name = str(log_config.get("level", "INFO")).upper()
    log_level = getattr(logging, level_name, logging.INFO)
    log_file = log_config.get("file", "")

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    root = logging.getLogger()
    root.setLevel(log_level)
    if not root.handlers:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        root.addHandler(console_handler)
        if log_file:
            file_handler = logging.FileHandler(log_file, encoding="utf-8")
            file_handler.setFormatter(formatter)
            root.addHandler(file_handler)


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(doc: Any, overrides: List[str]) -> Any:
    """Aplica --set clave.punteada=valor sobre el JSON crudo (antes de validar)."""
    doc = copy.deepcopy(doc)
    for item in overrides or []:
        if "=" not in item:
            raise InstanceFormatError(f"--set espera clave=valor, recibido {item!r}")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise InstanceFormatError(f"--set con clave vacía: {item!r}")
        value = _parse_override_value(raw.strip())
        node = doc
        for depth, part in enumerate(parts):
            last = depth == len(parts) - 1
            if isinstance(node, list):
                try:
                    index = int(part)
                    node[index]
                except (ValueError, IndexError):
                    raise InstanceFormatError(f"--set {key}: índice '{part}' no válido")
                if last:
                    node[index] = value
                else:
                    node = node[index]
            elif isinstance(node, dict):
                if last:
                    node[part] = value
                else:
                    node = node.setdefault(part, {})
            else:
                raise InstanceFormatError(f"--set {key}: '{part}' no es un contenedor")
    return doc


@dataclass
class RunContext:
    config: Dict[str, Any]
    solver: SolverConfig
    experiments: ExperimentConfig
    profiles_dir: str


def build_context(config: Dict[str, Any], args: argparse.Namespace) -> RunContext:
    solver_doc = dict(config.get("solver", {}))
    if args.epsilon is not None:
        solver_doc["epsilon"] = args.epsilon
    if args.max_iter is not None:
        solver_doc["max_iter"] = args.max_iter
    solver = SolverConfig.from_dict(solver_doc)

    exp_doc = dict(config.get("experiments", {}))
    if args.replicates is not None:
        exp_doc["replicates"] = args.replicates
    if args.seed is not None:
        exp_doc["base_seed"] = args.seed
    experiments = ExperimentConfig.from_dict(exp_doc, solver)

    profiles_dir = exp_doc.get("profiles_dir", "profiles")
    if not os.path.isabs(profiles_dir):
        profiles_dir = os.path.join(SCRIPT_DIR, profiles_dir)
    return RunContext(config, solver, experiments, profiles_dir)


# ─────────────────────────────────────────────────────────
# Formato de salida
# ─────────────────────────────────────────────────────────

def _flag(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def _bool(value: bool) -> str:
    return "true" if value else "false"


def _vector(values: np.ndarray) -> str:
    return "[" + ", ".join(f"{v:.6f}" for v in values) + "]"


def _emit(text: str, output: Optional[str]):
    if output:
        with open(output, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# ─────────────────────────────────────────────────────────
# Carga de entradas
# ─────────────────────────────────────────────────────────

def _require_input(args: argparse.Namespace) -> str:
    if not args.input:
        raise InstanceFormatError(f"{args.command}: falta --input")
    return args.input


def _load_document(path: str, args: argparse.Namespace) -> Any:
    return apply_overrides(read_json_document(path), args.set)


def _load_instance_arg(args: argparse.Namespace) -> MarketInstance:
    return instance_from_dict(_load_document(_require_input(args), args))


def _scenario_arg(args: argparse.Namespace, ctx: RunContext):
    path = args.input or os.path.join(ctx.profiles_dir, "default.json")
    cfg = scenario_from_dict(_load_document(path, args))
    if args.seed is not None:
        cfg = cfg.with_changes(seed=args.seed)
    return cfg


# ─────────────────────────────────────────────────────────
# Subcomandos
# ─────────────────────────────────────────────────────────

def cmd_check(args: argparse.Namespace, ctx: RunContext) -> int:
    inst = _load_instance_arg(args)
    a1 = check_assumption1(inst)
    pd = check_positive_definite(inst)
    p = inst.params
    threshold = float(np.mean(inst.a)) + p.mu * p.s
    print(f"Instance: N={inst.n}")
    print(f"Assumption 1: {_flag(a1.holds)} (min margin {a1.min_margin:.3f})")
    print(f"Assumption 2: {_flag(check_assumption2(inst))} (c = {p.c:.6f}, mean(a) + mu*s = {threshold:.6f})")
    print(f"Positive definite (B - G): {_flag(pd.holds)} (min eigenvalue {pd.min_eigenvalue:.6f})")
    print(f"Gershgorin bound: {gershgorin_bound(inst):.6f}")
    print(f"Diagonal dominance: {_flag(is_diagonally_dominant(inst))}")
    if inst.graph.scale != 1.0:
        print(f"Graph scale: {inst.graph.scale:.6f}")
    return 0


def cmd_solve(args: argparse.Namespace, ctx: RunContext) -> int:
    inst = _load_instance_arg(args)
    if not args.reward:
        raise InstanceFormatError("solve: falta --reward")
    r = load_reward(args.reward, inst.n)
    closed = solve_closed_form(inst, r, ctx.solver)
    dynamic = solve_br_dynamics(inst, r, ctx.solver)
    print(f"closed-form: x = {_vector(closed.x)} interior={_bool(closed.interior)}")
    print(f"best-response: x = {_vector(dynamic.x)} iterations={dynamic.iterations} "
          f"converged={_bool(dynamic.converged)} residual={dynamic.residual:.3e}")
    if closed.interior:
        gap = float(np.max(np.abs(closed.x - dynamic.x)))
        print(f"cross-validation: max |x_closed - x_br| = {gap:.3e}")
    else:
        print("cross-validation: n/a (closed form not interior)")
    if args.output:
        _emit(json.dumps({"closed_form": closed.to_dict(), "best_response": dynamic.to_dict()}, indent=2) + "\n",
              args.output)
    return 0


def cmd_optimize(args: argparse.Namespace, ctx: RunContext) -> int:
    regime = REGIME_FLAGS[args.regime]
    doc = _load_document(_require_input(args), args)
    if isinstance(doc, dict) and "profiles" in doc:
        inst = instance_from_dict(doc)
        exp = ExpectationProfile.from_instance(inst)
    else:
        cfg = scenario_from_dict(doc)
        if args.seed is not None:
            cfg = cfg.with_changes(seed=args.seed)
        inst = generate_random_instance(cfg)
        exp = expectation_of(cfg)

    sol = solve_regime(inst, regime, ctx.solver, exp)
    eq = sol.equilibrium
    print(f"regime: {sol.regime}")
    if regime == DISCRIMINATORY:
        print(f"r* = {_vector(sol.r)}")
    else:
        print(f"r* = {sol.r[0]:.6f}")
    print(f"Π = {sol.revenue:.6f}")
    print(f"total MU utility = {sol.total_mu_utility:.6f}")
    print(f"total reward paid = {sol.total_reward_paid:.6f}")
    print(f"equilibrium: method={eq.method} interior={_bool(eq.interior)} converged={_bool(eq.converged)}")
    print(f"x = {_vector(eq.x)}")
    print(f"matrix-form Π = {sol.matrix_revenue:.6f}")
    for note in sol.warnings:
        print(f"warning: {note}")
    if args.output:
        _emit(json.dumps(sol.to_dict(), indent=2) + "\n", args.output)
    return 0


def _sweep_values(args: argparse.Namespace) -> List[float]:
    if not args.values:
        return DEFAULT_SWEEP_VALUES[args.command]
    try:
        return [json.loads(v) for v in args.values.split(",") if v.strip()]
    except json.JSONDecodeError:
        raise InstanceFormatError(f"--values espera números separados por comas: {args.values!r}")


def cmd_sweep(args: argparse.Namespace, ctx: RunContext) -> int:
    path = args.input or os.path.join(ctx.profiles_dir, "default.json")
    base_cfg = scenario_from_dict(_load_document(path, args))
    values = _sweep_values(args)
    if args.command == "sweep-n":
        records = sweep_n(base_cfg, values, exp_cfg=ctx.experiments)
    else:
        records = sweep_social(base_cfg, values, exp_cfg=ctx.experiments)
    trends = check_trends(records)

    if not args.output:
        write_records_csv(records, sys.stdout)
        for note in trends:
            logger.warning(f"tendencia: {note}")
        return 0

    with open(args.output, "w", encoding="utf-8", newline="") as f:
        write_records_csv(records, f)
    print(f"{args.command}: {len(records)} rows -> {args.output} "
          f"(basis {ctx.experiments.revenue_basis}, {ctx.experiments.replicates} replicates)")
    print(f"{'value':<10} {'regime':<16} {'revenue':>14} {'mu_utility':>14} {'reward_paid':>14} {'failed':>7}")
    for row in summarize(records):
        print(f"{row['sweep_value']:<10g} {row['regime']:<16} {row['revenue']:>14.6f} "
              f"{row['total_mu_utility']:>14.6f} {row['total_reward_paid']:>14.6f} {row['failed']:>7d}")
    for note in trends:
        print(f"warning: trend: {note}")
    return 0


def cmd_case_study(args: argparse.Namespace, ctx: RunContext) -> int:
    doc = ctx.config.get("case_study", {})
    if args.input:
        doc = _merge(doc, read_json_document(args.input))
    doc = apply_overrides(doc, args.set)
    try:
        n = int(doc["n"])
        a = float(doc["a"])
        b = float(doc["b"])
    except (KeyError, TypeError, ValueError) as e:
        raise InstanceFormatError(f"perfil de caso de estudio inválido: {e}")
    params = params_from_dict(doc.get("params", CHAIN_PARAMS.to_dict()))
    basis = str(doc.get("basis", "matrix"))

    result = case_study_chain(n=n, params=params, a=a, b=b, solver=ctx.solver, basis=basis)
    if not args.output:
        write_case_study_csv(result, sys.stdout)
        return 0

    with open(args.output, "w", encoding="utf-8", newline="") as f:
        write_case_study_csv(result, f)
    margin = check_assumption1(result.instance).min_margin
    print(f"case-study: N={n} a={a:g} b={b:g} basis={basis} -> {args.output}")
    print(f"Assumption 1 min margin: {margin:.6f}")
    print(f"uniform r* = {result.uniform_r[0]:.6f}")
    print(f"uniform participation argmax: {result.participation_peak} "
          f"(x in [{result.uniform_x.min():.6f}, {result.uniform_x.max():.6f}])")
    if not result.uniform.matrix_interior:
        outside = int(np.sum(result.uniform.matrix_x <= 0))
        active = int(np.sum(result.uniform.equilibrium.x > 0))
        print(f"warning: non-interior: {outside} MU with matrix x <= 0; {active} MU participate in equilibrium")
    print(f"discriminatory r[1] = {result.disc_r[0]:.6f}, r[{n}] = {result.disc_r[-1]:.6f}, "
          f"max at index {int(np.argmax(result.disc_r)) + 1}")
    return 0


def cmd_scenario_dump(args: argparse.Namespace, ctx: RunContext) -> int:
    cfg = _scenario_arg(args, ctx)
    inst = generate_random_instance(cfg)
    text = dump_instance(inst) + "\n"
    _emit(text, args.output)
    return 0


def cmd_oracle(args: argparse.Namespace, ctx: RunContext) -> int:
    inst = _load_instance_arg(args)
    print(f"Instance: N={inst.n}")

    if inst.n in ORACLE_DISC_STEPS:
        steps = ORACLE_DISC_STEPS[inst.n]
        sol = solve_regime(inst, DISCRIMINATORY, ctx.solver)
        grid = brute_force_discriminatory(inst, (0.0, 5.0), steps, ctx.solver)
        gap = float(np.max(np.abs(grid - sol.r)))
        print(f"discriminatory: closed r* = {_vector(sol.r)} grid r = {_vector(grid)} "
              f"gap = {gap:.6f} (step {5.0 / (steps - 1):.6f})")
    else:
        print("discriminatory: skipped (N > 3)")

    sol = solve_regime(inst, UNIFORM, ctx.solver)
    grid_r = brute_force_uniform(inst, (-5.0, 25.0), 30001, ctx.solver)
    print(f"uniform: closed r* = {sol.r[0]:.6f} grid r = {grid_r:.6f} "
          f"gap = {abs(grid_r - sol.r[0]):.6f} (step 0.001000) interior={_bool(sol.matrix_interior)}")

    try:
        gap = cross_validate(inst, sol.r, ctx.solver)
        print(f"solvers: max |x_closed - x_br| = {gap:.3e}")
    except SolverError:
        print("solvers: n/a (closed form not interior)")
    return 0


COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "optimize": cmd_optimize,
    "sweep-n": cmd_sweep,
    "sweep-social": cmd_sweep,
    "case-study": cmd_case_study,
    "scenario-dump": cmd_scenario_dump,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--input', '-i', help='Instancia, perfil de escenario o perfil de cadena (JSON)')
    common.add_argument('--reward', '-r', help='Archivo de recompensas {"r": [...]}')
    common.add_argument('--output', '-o', help='Archivo de salida (por defecto stdout)')
    common.add_argument('--regime', choices=sorted(REGIME_FLAGS), default='disc', help='Régimen de recompensa')
    common.add_argument('--seed', type=int, help='Semilla (base de las réplicas en los barridos)')
    common.add_argument('--replicates', type=int, help='Réplicas por punto del barrido')
    common.add_argument('--values', help='Valores del barrido separados por comas')
    common.add_argument('--epsilon', type=float, help='Tolerancia de la dinámica de mejor respuesta')
    common.add_argument('--max-iter', dest='max_iter', type=int, help='Máximo de barridos')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='Sobrescribe una clave del JSON de entrada (repetible)')

    parser = argparse.ArgumentParser(description='Mercado de crowdsensing con efectos de red social')
    parser.add_argument('--config', '-c', default=os.path.join(SCRIPT_DIR, 'config.json'), help='Config file')
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    _force_utf8_stdio()
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config, pending = load_runtime_config(args.config)
    except InstanceFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    setup_logging(config)
    if pending:
        logger.warning(pending)

    try:
        ctx = build_context(config, args)
        return COMMANDS[args.command](args, ctx)
    except InstanceFormatError as e:
        logger.error(f"Error de formato: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except InvariantError as e:
        logger.error(f"Invariante violada: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except SolverError as e:
        logger.error(f"Error del solver: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except MarketError as e:
        logger.error(f"Error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"Error inesperado: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
