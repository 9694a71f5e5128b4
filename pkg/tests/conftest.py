"""Session-wide caches so expensive artifacts (datasets, trained models,
reference posteriors) are built once and shared between the module tests
and the acceptance suite."""

import numpy as np
import pytest

from abdm.core import TaskId
from abdm.costs import CostSpec
from abdm.inference import TrainConfig, action_distribution_for, train_bam, train_npe
from abdm.oracles import reference_posterior
from abdm.simulators import generate_dataset

EVAL_SEED = 777  # master seed for held-out evaluation observations


@pytest.fixture(scope="session")
def store():
    return _Store()


class _Store:
    def __init__(self):
        self._datasets = {}
        self._models = {}
        self._posteriors = {}

    def dataset(self, task: TaskId, n: int, seed: int):
        key = (task, n, seed)
        if key not in self._datasets:
            self._datasets[key] = generate_dataset(task, n, master_seed=seed)
        return self._datasets[key]

    def observations(self, task: TaskId, n: int = 10):
        return self.dataset(task, n, EVAL_SEED)

    def npe(self, task: TaskId, budget: int, seed: int, **overrides):
        key = ("npe", task, budget, seed, tuple(sorted(overrides.items())))
        if key not in self._models:
            cfg = TrainConfig.for_task(task, **overrides)
            self._models[key] = train_npe(self.dataset(task, budget, seed), cfg, seed=seed)
        return self._models[key]

    def bam(self, task: TaskId, budget: int, seed: int, marginal: int = 0, **overrides):
        key = ("bam", task, budget, seed, marginal, tuple(sorted(overrides.items())))
        if key not in self._models:
            cfg = TrainConfig.for_task(task, **overrides)
            spec = CostSpec(task, marginal_index=marginal)
            self._models[key] = train_bam(
                self.dataset(task, budget, seed),
                cfg,
                action_distribution_for(task),
                spec,
                seed=seed,
            )
        return self._models[key]

    def posterior(self, task: TaskId, obs_id: int, n_obs: int = 10):
        key = (task, obs_id, n_obs)
        if key not in self._posteriors:
            obs = self.observations(task, n_obs)
            self._posteriors[key] = reference_posterior(
                task, obs.xs[obs_id], seed=1000 + obs_id
            )
        return self._posteriors[key]
