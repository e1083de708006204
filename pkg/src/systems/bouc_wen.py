"""
Bouc-Wen hysteresis

Forward-Euler discretization of the Bouc-Wen state equation, used as the
loudspeaker-like nonlinearity in the hysteresis experiment:

    s[n] = s[n-1] + alpha*du - zeta*|s[n-1]|*du - beta*|du|*s[n-1]
    d[n] = mu*u[n] - s[n]

with du = u[n] - u[n-1].
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.common.errors import NonFiniteError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoucWenParams:
    alpha: float = 0.3
    beta: float = 1.0
    zeta: float = 0.5
    mu: float = 0.5


@dataclass(frozen=True)
class BoucWenState:
    s: float = 0.0
    u_prev: float = 0.0


def bouc_wen_step(state: BoucWenState, u: float,
                  params: BoucWenParams = BoucWenParams()) -> Tuple[BoucWenState, float]:
    """Advance one sample; returns the new state and the output d"""
    du = u - state.u_prev
    s = state.s + params.alpha * du - params.zeta * abs(state.s) * du - params.beta * abs(du) * state.s
    return BoucWenState(s=s, u_prev=u), params.mu * u - s


def bouc_wen(u: np.ndarray, params: BoucWenParams = BoucWenParams(),
             state: Optional[BoucWenState] = None,
             return_state: bool = False):
    """Drive the model over a whole input sequence"""
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise NonFiniteError("Bouc-Wen input contains non-finite values")

    alpha, beta, zeta, mu = params.alpha, params.beta, params.zeta, params.mu
    s = 0.0 if state is None else state.s
    u_prev = 0.0 if state is None else state.u_prev
    hysteretic = np.empty_like(u)
    # Sequential recursion; plain floats keep it fast enough for seconds of audio.
    for n, u_n in enumerate(u.tolist()):
        du = u_n - u_prev
        s = s + alpha * du - zeta * abs(s) * du - beta * abs(du) * s
        hysteretic[n] = s
        u_prev = u_n

    output = mu * u - hysteretic
    if return_state:
        return output, hysteretic, BoucWenState(s=s, u_prev=u_prev)
    return output


def loop_area(u: np.ndarray, d: np.ndarray) -> float:
    """Area enclosed by the (u, d) trajectory (shoelace formula)"""
    u = np.asarray(u, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return 0.5 * abs(float(np.dot(u, np.roll(d, -1)) - np.dot(d, np.roll(u, -1))))
