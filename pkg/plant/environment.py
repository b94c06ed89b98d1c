"""Two-zone data-centre plant driven at the control interval."""

import hashlib
import json
from dataclasses import asdict
from typing import Any, NamedTuple, Optional, Sequence, Union

import numpy as np

from errors import TraceExhaustedError, TraceValidationError
from logger.logger import get_logger
from mpc.reward import RewardParams, reward
from plant.signals import Observation, RawAction
from plant.thermal_zone import (
    PlantParams,
    PlantState,
    SimConfig,
    default_state,
    hvac_power,
    local_loop,
    step_single_zone,
    zone_exogenous,
)
from plant.traces import Trace

logger = get_logger(__name__)

DEFAULT_ACTION = RawAction(TS_west=23.5, TS_east=23.5, F_west=6.25, F_east=6.25)

ZoneStates = tuple[PlantState, PlantState]


class StepResult(NamedTuple):
    observation: Observation
    reward: float
    info: dict[str, Any]
    done: bool


def advance_interval(
    zones: ZoneStates,
    action: np.ndarray,
    T_o: np.ndarray,
    W_o: np.ndarray,
    ite_watts: np.ndarray,
    params: PlantParams,
    sim: SimConfig,
) -> tuple[ZoneStates, np.ndarray]:
    """
    Advance both zones through one control interval with `action` held.

    Pure: the result depends only on the arguments. `action` may carry
    leading batch dimensions, in which case the zone states broadcast
    against them and the returned observation has shape (..., 5).

    Returns:
        (new zone states, observation averaged over the sub-steps)
    """
    action = np.asarray(action, dtype=np.float64)
    n = sim.substeps
    if len(T_o) < n or len(W_o) < n or len(ite_watts) < n:
        raise TraceExhaustedError("trace segment shorter than one interval")

    west, east = zones
    temp_sum = [0.0, 0.0]
    hvac_sum = 0.0
    for i in range(n):
        stepped = []
        for z, zone in enumerate((west, east)):
            control = local_loop(action[..., z], action[..., 2 + z], zone.T_3, params)
            exo = zone_exogenous(T_o[i], W_o[i], ite_watts[i], params)
            hvac_sum = hvac_sum + hvac_power(control, params)
            zone = step_single_zone(
                zone, control, exo, params, sim.dt, sim.integrator
            )
            temp_sum[z] = temp_sum[z] + zone.T_3
            stepped.append(zone)
        west, east = stepped

    columns = np.broadcast_arrays(
        np.sum(T_o[:n]) / n,
        temp_sum[0] / n,
        temp_sum[1] / n,
        np.sum(ite_watts[:n]) / n,
        hvac_sum / n,
    )
    return (west, east), np.stack(columns, axis=-1)


class TwoZoneDataCenter:
    """
    West and east zones sharing outdoor conditions and the ITE load.

    Each `step` applies one raw action for a full control interval made of
    `sim.substeps` integration sub-steps and returns the averaged
    observation. The plant is deterministic; randomness only enters through
    the traces it is built from.
    """

    def __init__(
        self,
        weather: Trace,
        ite_load: Trace,
        params: PlantParams = PlantParams(),
        sim: SimConfig = SimConfig(),
        reward_params: RewardParams = RewardParams(),
        initial_action: RawAction = DEFAULT_ACTION,
        initial_state: Optional[PlantState] = None,
    ):
        for name in ("T_o_C", "W_o"):
            if name not in weather.columns:
                raise TraceValidationError(f"weather trace lacks {name}")
        if "watts" not in ite_load.columns:
            raise TraceValidationError("ITE trace lacks watts")
        weather = weather.resample(sim.dt)
        ite_load = ite_load.resample(sim.dt)

        self.params = params
        self.sim = sim
        self.reward_params = reward_params
        self.initial_action = initial_action
        self.initial_state = initial_state or default_state(params)
        self._T_o = weather.column("T_o_C")
        self._W_o = weather.column("W_o")
        self._ite = ite_load.column("watts")
        self.n_intervals = min(len(weather), len(ite_load)) // sim.substeps
        self.episode_id = -1
        self.reset()

    def reset(self) -> Observation:
        self.zones: ZoneStates = (self.initial_state, self.initial_state)
        self.interval = 0
        self.last_action = self.initial_action
        self.episode_id += 1
        self.observation = self._instant_observation()
        logger.debug(
            f"Environment reset, episode {self.episode_id}, "
            f"{self.n_intervals} intervals available"
        )
        return self.observation

    def remaining_intervals(self) -> int:
        return self.n_intervals - self.interval

    def _instant_observation(self) -> Observation:
        start = min(self.interval * self.sim.substeps, len(self._T_o) - 1)
        action = self.last_action.to_array()
        power = 0.0
        for z, zone in enumerate(self.zones):
            control = local_loop(action[z], action[2 + z], zone.T_3, self.params)
            power += float(hvac_power(control, self.params))
        return Observation(
            T_out=float(self._T_o[start]),
            T_west=float(self.zones[0].T_3),
            T_east=float(self.zones[1].T_3),
            P_ite=float(self._ite[start]),
            P_hvac=power,
        )

    def segment(
        self, interval: int, count: int = 1
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Trace values for `count` intervals starting at `interval`."""
        n = self.sim.substeps
        start, stop = interval * n, (interval + count) * n
        return self._T_o[start:stop], self._W_o[start:stop], self._ite[start:stop]

    def step(self, action: Union[RawAction, Sequence[float]]) -> StepResult:
        """
        Apply `action` for one control interval.

        Raises:
            TraceExhaustedError: called after the traces are used up
        """
        if self.interval >= self.n_intervals:
            raise TraceExhaustedError(
                f"no trace data left after {self.n_intervals} intervals"
            )
        if not isinstance(action, RawAction):
            action = RawAction.from_array(np.asarray(action))
        T_o, W_o, ite = self.segment(self.interval)
        self.zones, values = advance_interval(
            self.zones,
            action.to_array(),
            T_o,
            W_o,
            ite,
            self.params,
            self.sim,
        )
        self.zones = tuple(
            PlantState(float(z.T_2), float(z.T_3), float(z.W_3))
            for z in self.zones
        )  # type: ignore[assignment]
        self.interval += 1
        self.last_action = action
        self.observation = Observation.from_array(values)
        breakdown = reward(self.observation, self.reward_params)
        info = {
            "violation_west": breakdown.violation_west,
            "violation_east": breakdown.violation_east,
            "r_T": breakdown.r_T,
            "r_P": breakdown.r_P,
        }
        done = self.interval >= self.n_intervals
        return StepResult(self.observation, breakdown.r, info, done)

    def fingerprint(self) -> str:
        """Digest of the plant settings and the full trace contents."""
        settings = {
            "params": asdict(self.params),
            "sim": asdict(self.sim),
            "reward": asdict(self.reward_params),
            "initial_action": self.initial_action.to_array().tolist(),
            "initial_state": [
                float(v) for v in asdict(self.initial_state).values()
            ],
        }
        digest = hashlib.sha256(json.dumps(settings, sort_keys=True).encode())
        for column in (self._T_o, self._W_o, self._ite):
            digest.update(np.ascontiguousarray(column, dtype=np.float64).tobytes())
        return digest.hexdigest()

    def state_dict(self) -> dict[str, Any]:
        return {
            "interval": self.interval,
            "episode_id": self.episode_id,
            "zones": [[z.T_2, z.T_3, z.W_3] for z in self.zones],
            "last_action": list(self.last_action.to_array()),
            "observation": list(self.observation.to_array()),
        }

    def load_state_dict(self, state: dict[str, Any]) -> None:
        self.interval = int(state["interval"])
        self.episode_id = int(state["episode_id"])
        self.zones = tuple(
            PlantState(*(float(v) for v in zone)) for zone in state["zones"]
        )  # type: ignore[assignment]
        self.last_action = RawAction.from_array(np.array(state["last_action"]))
        self.observation = Observation.from_array(
            np.array(state["observation"])
        )
