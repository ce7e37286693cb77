"""Behavior-cloning loop: dataset generation, training with periodic validation,
and policy evaluation on held-out seeds."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .ravens import Demonstration, EvalResult, evaluate, generate, make_rng, oracle
from .transporter import TransporterAgent

__all__ = ["RunConfig", "TrainResult", "split_seeds", "make_demos", "evaluate_policy", "train",
           "oracle_policy"]

log = logging.getLogger(__name__)

# scene seeds for the three splits never collide
_SPLITS = {"train": 0, "valid": 1 << 40, "test": 2 << 40}
_VALID_GROUP_ORDERS = (4, 6, 8, 36)


@dataclass
class RunConfig:
    task: str = "insert-L"
    seed: int = 0
    n: int = 8
    demos: int = 10
    steps: int = 2000
    eval_episodes: int = 20
    val_episodes: int = 20
    val_every: int = 100
    lr: float = 1e-4
    place: str = "equivariant"
    pick: str = "equivariant"
    stop_at: float | None = None  # stop once validation success reaches this
    dataset: str | None = None
    checkpoint: str | None = None
    out: str | None = None

    def validate(self) -> list[str]:
        """Raise on invalid values; return warnings."""
        for name in ("demos", "steps", "eval_episodes", "val_episodes", "val_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n not in _VALID_GROUP_ORDERS:
            raise ValueError(f"n must be one of {_VALID_GROUP_ORDERS}, got {self.n}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        warnings = []
        if 4 % self.n and self.n % 4:
            warnings.append(f"C_{self.n} rotations are interpolated; equivariance is approximate")
        elif self.n != 4:
            warnings.append(f"C_{self.n} contains non-quarter turns; equivariance is exact only on C_4")
        return warnings


def split_seeds(split: str, seed: int, count: int) -> list[int]:
    base = _SPLITS[split] + (int(seed) << 20)
    return [base + i for i in range(count)]


def make_demos(task: str, seeds, angle_bins: int = 8) -> list[Demonstration]:
    return [oracle(generate(s, task, angle_bins)) for s in seeds]


def oracle_policy(scene):
    d = oracle(scene)
    return d.pick, d.place


def evaluate_policy(policy, task: str, seeds, angle_bins: int = 8) -> list[EvalResult]:
    """Run ``policy(scene) -> (pick, place)`` on freshly generated scenes."""
    out = []
    for s in seeds:
        scene = generate(s, task, angle_bins)
        pick, place = policy(scene)
        out.append(evaluate(scene, pick, place))
    return out


def agent_policy(agent: TransporterAgent):
    return lambda scene: agent.act(scene.image)


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)  # (step, pick, angle, place)
    curve: list = field(default_factory=list)  # (step, validation success)
    best_step: int = 0
    best_success: float = -1.0
    best_state: list | None = None
    best_adam: dict | None = None

    def first_step_reaching(self, level: float):
        for step, s in self.curve:
            if s >= level:
                return step
        return None


def train(agent: TransporterAgent, demos, config: RunConfig, on_log=None) -> TrainResult:
    """Serial training with validation every ``val_every`` steps.

    The demo visited at each step is drawn from a generator keyed by the run
    seed and the step number, so runs (and resumed runs) are reproducible.
    The best parameters by validation success (earliest on ties) are kept in
    ``best_state`` together with the optimizer state of that step.
    """
    demos = list(demos)
    if not demos:
        raise ValueError("no demonstrations to train on")
    val_seeds = split_seeds("valid", config.seed, config.val_episodes)
    res = TrainResult()
    start = agent.adam["pick"].step
    for step in range(start + 1, config.steps + 1):
        demo = demos[int(make_rng(config.seed, (99 << 32) + step).integers(len(demos)))]
        ls = agent.training_step(demo)
        res.losses.append((step, ls["pick"], ls["angle"], ls["place"]))
        if on_log:
            on_log(step, ls)
        if step % config.val_every == 0 or step == config.steps:
            results = evaluate_policy(agent_policy(agent), config.task, val_seeds)
            success = float(np.mean([r.success for r in results]))
            res.curve.append((step, success))
            log.info("step %d validation success %.3f", step, success)
            if success > res.best_success:
                res.best_success, res.best_step = success, step
                res.best_state = agent.state_dict()
                res.best_adam = copy.deepcopy(agent.adam)
            if config.stop_at is not None and success >= config.stop_at:
                break
    return res
