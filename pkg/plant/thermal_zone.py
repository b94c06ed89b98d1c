"""
Single-zone thermal model: supply-air temperature, space temperature and
space humidity advanced by the energy-conservation ODEs of a chilled-water
air handler.

Energy terms are evaluated in the imperial units the equations are written
in (°F/min) and converted to °C/min; flow-ratio terms are unit-agnostic.
All functions broadcast over numpy arrays so a batch of zones (one per
planning candidate) advances in a single call.
"""

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from errors import ConfigError, IntegrationError
from logger.logger import get_logger

logger = get_logger(__name__)

ArrayLike = Union[float, np.ndarray]

F_PER_C = 9.0 / 5.0
C_PER_F = 5.0 / 9.0
BTU_PER_MIN_PER_WATT = 3.412 / 60.0
CHW_BTU_PER_GAL = 6000.0

STATE_COMPONENTS = ("T_2", "T_3", "W_3")


@dataclass(frozen=True)
class PlantParams:
    """
    Physical and local-loop parameters of one zone.

    Air properties are standard values and the geometry is a 50x50x10 ft
    room; the loop gains are chosen so the explicit Euler scheme is stable
    at one-minute sub-steps over the whole flow range. The fan coefficient
    puts a mid-range fan at about 3.8 kW per zone and a full one at about
    15.6 kW.
    """

    V_s: float = 25_000.0
    V_he: float = 5_000.0
    C_p: float = 0.24
    rho: float = 0.074
    h_fg: float = 1078.0
    h_w: float = 28.0
    W_s: float = 0.008
    mix_fresh: float = 0.25
    k_fan: float = 1.0e-6
    k_chill: float = 30_000.0
    kp_gpm: float = 0.08
    gpm_max: float = 0.3
    flow_offset: float = 0.0
    flow_per_unit: float = 250.0
    ite_share: float = 0.5
    moisture_load: float = 0.0

    def __post_init__(self) -> None:
        for name in ("V_s", "V_he", "C_p", "rho", "h_fg", "h_w"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"plant parameter {name} must be positive")
        if not 0.0 < self.mix_fresh < 1.0:
            raise ConfigError("mix_fresh must be in (0, 1)")
        if self.k_fan < 0 or self.k_chill < 0:
            raise ConfigError("k_fan and k_chill must be non-negative")
        if self.W_s < 0 or self.moisture_load < 0:
            raise ConfigError("humidity parameters must be non-negative")
        if self.kp_gpm < 0 or self.gpm_max < 0:
            raise ConfigError("local loop gains must be non-negative")
        if not 0.0 <= self.ite_share <= 1.0:
            raise ConfigError("ite_share must be in [0, 1]")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0
    control_interval: float = 15.0
    integrator: Literal["euler", "rk4"] = "euler"

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.control_interval <= 0:
            raise ConfigError("dt and control_interval must be positive")
        ratio = self.control_interval / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("control_interval must be a multiple of dt")
        if self.integrator not in ("euler", "rk4"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")

    @property
    def substeps(self) -> int:
        return int(round(self.control_interval / self.dt))


@dataclass(frozen=True)
class PlantState:
    T_2: ArrayLike
    T_3: ArrayLike
    W_3: ArrayLike


@dataclass(frozen=True)
class Exogenous:
    T_o: ArrayLike
    W_o: ArrayLike
    Q_o: ArrayLike
    M_o: ArrayLike


@dataclass(frozen=True)
class ControlInput:
    f: ArrayLike
    gpm: ArrayLike


def derivatives(
    state: PlantState,
    control: ControlInput,
    exo: Exogenous,
    params: PlantParams,
) -> tuple[ArrayLike, ArrayLike, ArrayLike]:
    """Return (dT_2/dt, dT_3/dt, dW_3/dt) in °C/min and 1/min."""
    f, gpm = control.f, control.gpm
    ratio_s = f / params.V_s
    ratio_he = f / params.V_he
    air_s = params.rho * params.C_p * params.V_s
    air_he = params.rho * params.C_p * params.V_he

    dT_3 = ratio_s * (state.T_2 - state.T_3) + C_PER_F * (
        -params.h_fg * f / (params.C_p * params.V_s) * (params.W_s - state.W_3)
        + (exo.Q_o - params.h_fg * exo.M_o) / air_s
    )
    dW_3 = ratio_s * (params.W_s - state.W_3) + exo.M_o / (
        params.rho * params.V_s
    )
    mixed_w = params.mix_fresh * exo.W_o + (1.0 - params.mix_fresh) * state.W_3
    dT_2 = (
        ratio_he * (state.T_3 - state.T_2)
        + params.mix_fresh * ratio_he * (exo.T_o - state.T_3)
        + C_PER_F
        * (
            -f * params.h_w / (params.C_p * params.V_he) * (mixed_w - params.W_s)
            - CHW_BTU_PER_GAL * gpm / air_he
        )
    )
    return dT_2, dT_3, dW_3


def _check_finite(values: tuple[ArrayLike, ...]) -> None:
    for component, value in zip(STATE_COMPONENTS, values):
        if not np.all(np.isfinite(value)):
            logger.error(f"Integration blew up in component {component}")
            raise IntegrationError(component)


def _shifted(state: PlantState, k: tuple, scale: float) -> PlantState:
    return PlantState(
        T_2=state.T_2 + scale * k[0],
        T_3=state.T_3 + scale * k[1],
        W_3=state.W_3 + scale * k[2],
    )


def step_single_zone(
    state: PlantState,
    control: ControlInput,
    exo: Exogenous,
    params: PlantParams,
    dt: float,
    integrator: Literal["euler", "rk4"] = "euler",
) -> PlantState:
    """
    Advance one zone by `dt` minutes with the control input held constant.

    Raises:
        IntegrationError: a derivative is not finite
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return state

    k1 = derivatives(state, control, exo, params)
    _check_finite(k1)
    if integrator == "euler":
        return _shifted(state, k1, dt)

    k2 = derivatives(_shifted(state, k1, dt / 2), control, exo, params)
    k3 = derivatives(_shifted(state, k2, dt / 2), control, exo, params)
    k4 = derivatives(_shifted(state, k3, dt), control, exo, params)
    _check_finite(k4)
    combined = tuple(
        (a + 2 * b + 2 * c + d) / 6.0 for a, b, c, d in zip(k1, k2, k3, k4)
    )
    return _shifted(state, combined, dt)


def hvac_power(control: ControlInput, params: PlantParams) -> ArrayLike:
    """Fan affinity law plus a linear chiller proxy, in watts."""
    return params.k_fan * control.f**3 + params.k_chill * control.gpm


def local_loop(
    setpoint: ArrayLike,
    fan_scale: ArrayLike,
    T_3: ArrayLike,
    params: PlantParams,
) -> ControlInput:
    """Proportional chilled-water loop on the space temperature."""
    gpm = np.clip(params.kp_gpm * (T_3 - setpoint), 0.0, params.gpm_max)
    f = params.flow_offset + params.flow_per_unit * fan_scale
    return ControlInput(f=f, gpm=gpm)


def zone_exogenous(
    T_o: ArrayLike, W_o: ArrayLike, ite_watts: ArrayLike, params: PlantParams
) -> Exogenous:
    return Exogenous(
        T_o=T_o,
        W_o=W_o,
        Q_o=params.ite_share * ite_watts * BTU_PER_MIN_PER_WATT,
        M_o=params.moisture_load,
    )


def default_state(params: PlantParams) -> PlantState:
    return PlantState(T_2=15.0, T_3=23.5, W_3=params.W_s)


