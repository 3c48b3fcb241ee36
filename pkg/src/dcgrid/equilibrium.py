"""Optimal steady state of the microgrid.

Given a bus-voltage target v_b* and duty-ratio target d_l*, the total
load current is fixed by the circuit, and the only freedom is how the
sources split it.  The split that minimizes total line losses
sum_j R_j i_tj^2 subject to sum_j i_tj = I_L has the closed form

    i_tj* = I_L / (R_j * sum_p 1/R_p)

(each source carries current inversely proportional to its line
resistance).  `solve_opf` uses the closed form; `opf_oracle` solves the
same program numerically through its KKT system and exists purely as an
independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MicrogridParams, pack_inputs, pack_state

__all__ = ["Equilibrium", "solve_opf", "opf_oracle", "total_load_current"]


@dataclass(frozen=True)
class Equilibrium:
    """Loss-optimal steady state (x*, u*) for given bus targets.

    All fields are in SI units.  `i_s` equals `i_t` componentwise: at
    steady state each converter's commanded current flows straight down
    its line.
    """

    v: np.ndarray
    i_t: np.ndarray
    v_b: float
    i_f: float
    v_l: float
    i_s: np.ndarray
    d_l: float
    v_b_target: float
    d_l_target: float

    @property
    def state(self) -> np.ndarray:
        return pack_state(self.v, self.i_t, self.v_b, self.i_f, self.v_l)

    @property
    def inputs(self) -> np.ndarray:
        return pack_inputs(self.i_s, self.d_l)

    @property
    def load_current(self) -> float:
        return float(np.sum(self.i_t))


def total_load_current(params: MicrogridParams, v_b_star: float,
                       d_l_star: float, *, quadratic_duty: bool = True) -> float:
    """Total current the sources must supply at the steady state.

    The bus feeds the linear load directly and the filtered load through
    the DC transformer, whose averaged primary current is d_l * i_f with
    i_f* = d_l * v_b / r_l, hence the d_l**2 term.  `quadratic_duty=False`
    selects the alternative linear-in-duty balance
    I_L = v_b/R_l + d_l*v_b/r_l for side-by-side comparison; it is not
    consistent with the circuit equations and is off by default.
    """
    if quadratic_duty:
        return v_b_star / params.R_l + d_l_star**2 * v_b_star / params.r_l
    return v_b_star / params.R_l + d_l_star * v_b_star / params.r_l


def _validate_targets(v_b_star: float, d_l_star: float) -> None:
    if not v_b_star > 0.0:
        raise ValueError(f"v_b_star must be positive, got {v_b_star}")
    if not 0.0 <= d_l_star <= 1.0:
        raise ValueError(f"d_l_star must lie in [0, 1], got {d_l_star}")


def solve_opf(params: MicrogridParams, v_b_star: float = 24.0,
              d_l_star: float = 0.5, *,
              quadratic_duty: bool = True) -> Equilibrium:
    """Closed-form loss-optimal steady state.

    Parameters
    ----------
    params : network constants.
    v_b_star : desired bus voltage [V], > 0.
    d_l_star : desired duty ratio, in [0, 1].
    quadratic_duty : see `total_load_current`.
    """
    _validate_targets(v_b_star, d_l_star)
    i_l = total_load_current(params, v_b_star, d_l_star,
                             quadratic_duty=quadratic_duty)
    conductance_sum = float(np.sum(1.0 / params.R))
    i_t = i_l / (params.R * conductance_sum)
    v = v_b_star + params.R * i_t
    v_l = d_l_star * v_b_star
    i_f = v_l / params.r_l
    return Equilibrium(
        v=v,
        i_t=i_t,
        v_b=float(v_b_star),
        i_f=float(i_f),
        v_l=float(v_l),
        i_s=i_t.copy(),
        d_l=float(d_l_star),
        v_b_target=float(v_b_star),
        d_l_target=float(d_l_star),
    )


def opf_oracle(params: MicrogridParams, v_b_star: float = 24.0,
               d_l_star: float = 0.5, *,
               quadratic_duty: bool = True) -> np.ndarray:
    """Per-source steady currents from a generic equality-constrained QP.

    Solves min sum_j R_j i_j^2 subject to sum_j i_j = I_L by assembling
    the KKT system

        [2 diag(R)   1] [i     ]   [0  ]
        [1^T         0] [lambda] = [I_L]

    and calling a dense linear solver.  Deliberately ignorant of the
    closed form in `solve_opf`.
    """
    _validate_targets(v_b_star, d_l_star)
    i_l = total_load_current(params, v_b_star, d_l_star,
                             quadratic_duty=quadratic_duty)
    n = params.n_sources
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = 2.0 * np.diag(params.R)
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = i_l
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n]
