"""dcgrid: simulation and control toolkit for a single-bus DC microgrid.

The package models a network of source converters feeding a common DC
bus and a filtered load, computes its loss-optimal steady state, and
closes the loop with either a nominal passivity-shaping controller or a
per-subsystem CLF-QP safety filter whose adaptive resilience term keeps
the closed loop bounded under exponentially growing input disturbances.

Typical use::

    from dcgrid import table1_params, solve_opf, Scenario, run_scenario

    eq = solve_opf(table1_params())
    trace, metrics = run_scenario(Scenario(params=table1_params()))

or from the shell: ``dcgrid simulate --scenario case2_expo.json``.
"""

from .attack import (ATTACK_KINDS, AttackSpec, ChannelAttack, EnvelopeResult,
                     envelope_check, evaluate_attack,
                     evaluate_attack_deterministic, noise_table)
from .config import (ConfigError, SCENARIO_DIR_ENV, SCENARIO_SCHEMA,
                     bundled_scenario_names, dump_scenario, load_scenario,
                     resolve_scenario_path, scenario_from_dict,
                     scenario_to_dict)
from .control import (QP_ACTIVE_CLF, QP_ACTIVE_LOWER, QP_ACTIVE_NAMES,
                      QP_ACTIVE_NONE, QP_ACTIVE_UPPER, ControllerConfig,
                      ControllerState, LieDerivatives, QPDiagnostics,
                      ar_clf_qp, global_clf_decay_check, lie_derivatives,
                      nominal_load_input, nominal_source_input,
                      resilience_term, rho_derivative)
from .equilibrium import (Equilibrium, opf_oracle, solve_opf,
                          total_load_current)
from .model import (GridState, MicrogridParams, PHSubsystem, build_ph,
                    check_port_cancellation, circuit_vector_field,
                    closed_loop_damping, closed_loop_interconnection,
                    hamiltonian, pack_inputs, pack_state, ph_vector_field,
                    q_diagonal, state_dim, table1_params)
from .sim import (CONTROLLER_KINDS, VERDICT_BOUNDED, VERDICT_CONVERGED,
                  VERDICT_DIVERGED, Metrics, Scenario, Trace,
                  TraceFormatError, compute_metrics, integrate_reference,
                  run_scenario, step_rk4)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # model
    "MicrogridParams", "GridState", "PHSubsystem", "state_dim",
    "pack_state", "pack_inputs", "q_diagonal", "circuit_vector_field",
    "hamiltonian", "build_ph", "ph_vector_field",
    "check_port_cancellation", "closed_loop_damping",
    "closed_loop_interconnection", "table1_params",
    # equilibrium
    "Equilibrium", "solve_opf", "opf_oracle", "total_load_current",
    # control
    "ControllerConfig", "ControllerState", "LieDerivatives",
    "QPDiagnostics", "QP_ACTIVE_NONE", "QP_ACTIVE_CLF", "QP_ACTIVE_LOWER",
    "QP_ACTIVE_UPPER", "QP_ACTIVE_NAMES", "nominal_source_input",
    "nominal_load_input", "lie_derivatives", "resilience_term", "ar_clf_qp",
    "rho_derivative", "global_clf_decay_check",
    # attack
    "AttackSpec", "ChannelAttack", "EnvelopeResult", "ATTACK_KINDS",
    "evaluate_attack", "evaluate_attack_deterministic", "noise_table",
    "envelope_check",
    # sim
    "Scenario", "Trace", "Metrics", "TraceFormatError", "CONTROLLER_KINDS",
    "VERDICT_CONVERGED", "VERDICT_BOUNDED", "VERDICT_DIVERGED",
    "run_scenario", "step_rk4", "compute_metrics", "integrate_reference",
    # config
    "ConfigError", "SCENARIO_SCHEMA", "SCENARIO_DIR_ENV", "load_scenario",
    "scenario_from_dict", "scenario_to_dict", "dump_scenario",
    "resolve_scenario_path", "bundled_scenario_names",
]
