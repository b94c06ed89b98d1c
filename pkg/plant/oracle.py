"""Planner dynamics backed by the simulator itself."""

import numpy as np

from dynamics.rollout import History
from plant.environment import TwoZoneDataCenter, advance_interval
from plant.signals import OBS_DIM


class SimulatorOracle:
    """
    Answers rollouts by simulating every candidate from the environment's
    current plant state with the true future traces. The history argument
    is ignored; the plant state is read, never modified.
    """

    def __init__(self, env: TwoZoneDataCenter):
        self.env = env

    def rollout(self, history: History, actions: np.ndarray) -> np.ndarray:
        env = self.env
        K, H, _ = actions.shape
        zones = env.zones
        preds = np.empty((K, H, OBS_DIM))
        last = env.n_intervals - 1
        for h in range(H):
            T_o, W_o, ite = env.segment(min(env.interval + h, last))
            zones, obs = advance_interval(
                zones, actions[:, h], T_o, W_o, ite, env.params, env.sim
            )
            preds[:, h] = obs
        return preds
