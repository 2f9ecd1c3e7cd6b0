"""Driver for the three-stage chain experiment.

Four emulators of the same composed chain are grown under one budget:
a plain GP and a two-layer deep GP of the whole composition (these see
only end-to-end runs), and linked emulators whose per-stage GP or deep
GP nodes are each trained on their own stage alone. Every emulator
starts from the same uniformly spaced initial design and is refined
sequentially, then scored on a uniform test grid against the exact
chain.
"""

from dataclasses import dataclass

import numpy as np

from ..deep import DGPTrainOptions, predict_dgp_batch
from ..design import ALM, DesignBox, uniform_grid
from ..gp import TrainOptions, predict_gp_batch
from ..network import (
    InputSource,
    LinkedEmulator,
    NetworkSpec,
    NodeRef,
    NodeSpec,
    propagate_linked_batch,
)
from .functions import CHAIN_STAGES, chain
from .growth import grow_dgp, grow_gp
from .metrics import coverage, nrmse

__all__ = ["SyntheticConfig", "run_synthetic", "chain_network_spec"]

ARMS = ("cgp", "cdgp", "lgp", "ldgp")


@dataclass
class SyntheticConfig:
    """One trial of the chain experiment, fully determined by `seed`.

    The deep-emulator protocol is split in two: `step_*` drives the
    cheap fresh retrains between acquisitions, `final_*` the closing
    train on the complete design. `criterion` applies to the plain-GP
    arms; deep arms always acquire by predictive variance.
    """

    seed: int = 0
    criterion: str = ALM
    emulators: tuple = ARMS
    n_initial: int = 5
    n_sequential: int = 15
    n_test: int = 500
    n_candidates: int = 200
    gp_starts: int = 10
    step_iterations: int = 100
    step_burnin: int = 60
    step_imputations: int = 5
    step_spacing: int = 3
    step_starts: int = 10
    final_iterations: int = 200
    final_burnin: int = 150
    final_imputations: int = 50
    final_spacing: int = 5
    final_starts: int = 10

    @property
    def budget(self):
        return self.n_initial + self.n_sequential

    def step_options(self):
        return DGPTrainOptions(
            iterations=self.step_iterations,
            burnin=self.step_burnin,
            n_imputations=self.step_imputations,
            spacing=self.step_spacing,
            m_step_starts=self.step_starts,
        )

    def final_options(self):
        return DGPTrainOptions(
            iterations=self.final_iterations,
            burnin=self.final_burnin,
            n_imputations=self.final_imputations,
            spacing=self.final_spacing,
            m_step_starts=self.final_starts,
        )


def chain_network_spec(kinds=("gp", "gp", "gp")):
    """A three-node head-to-tail chain, one emulator kind per stage."""
    refs = [NodeRef(k + 1, 0) for k in range(3)]
    nodes = [
        NodeSpec(refs[0], (InputSource.global_input(0),), emulator_kind=kinds[0]),
        NodeSpec(refs[1], (InputSource.node_output(refs[0]),), emulator_kind=kinds[1]),
        NodeSpec(refs[2], (InputSource.node_output(refs[1]),), emulator_kind=kinds[2]),
    ]
    return NetworkSpec(nodes)


def _stage_fn(stage):
    return lambda X: np.asarray(stage(X[:, 0]), dtype=float)


def _chain_fn(X):
    return np.asarray(chain(X[:, 0]), dtype=float)


def _linked_curve(models, kinds, grid):
    emu = LinkedEmulator(chain_network_spec(kinds), models)
    means, variances, _ = propagate_linked_batch(emu, grid)
    ref = emu.spec.terminal_refs[0]
    return means[ref][:, 0], np.sqrt(variances[ref][:, 0])


def run_synthetic(config=None):
    """Run one seeded trial and return the report dictionary.

    The report carries NRMSE (percent of the truth range) and central
    2-sd coverage per requested emulator, plus plot-ready prediction
    curves on the test grid.
    """
    config = config or SyntheticConfig()
    box = DesignBox(np.zeros(1), np.ones(1))
    X0 = uniform_grid(config.n_initial, box)
    grid = uniform_grid(config.n_test, box)
    truth = chain(grid[:, 0])

    gp_opts = TrainOptions(n_starts=config.gp_starts)
    deep = dict(
        step_options=config.step_options(),
        final_options=config.final_options(),
        n_candidates=config.n_candidates,
    )
    curves = {}

    if "cgp" in config.emulators:
        model, _, _ = grow_gp(
            _chain_fn,
            X0,
            box,
            config.budget,
            seed=config.seed,
            arm=1,
            criterion=config.criterion,
            options=gp_opts,
            n_candidates=config.n_candidates,
        )
        mean, var = predict_gp_batch(model, grid)
        curves["cgp"] = (mean, np.sqrt(var))

    if "cdgp" in config.emulators:
        model, _, _ = grow_dgp(
            _chain_fn, X0, box, config.budget, seed=config.seed, arm=2, **deep
        )
        mean, var = predict_dgp_batch(model, grid)
        curves["cdgp"] = (mean[:, 0], np.sqrt(var[:, 0]))

    if "lgp" in config.emulators:
        models = {}
        for k, stage in enumerate(CHAIN_STAGES):
            node, _, _ = grow_gp(
                _stage_fn(stage),
                X0,
                box,
                config.budget,
                seed=config.seed,
                arm=11 + k,
                criterion=config.criterion,
                options=gp_opts,
                n_candidates=config.n_candidates,
            )
            models[NodeRef(k + 1, 0)] = node
        curves["lgp"] = _linked_curve(models, ("gp",) * 3, grid)

    if "ldgp" in config.emulators:
        models = {}
        for k, stage in enumerate(CHAIN_STAGES):
            node, _, _ = grow_dgp(
                _stage_fn(stage),
                X0,
                box,
                config.budget,
                seed=config.seed,
                arm=21 + k,
                **deep,
            )
            models[NodeRef(k + 1, 0)] = node
        curves["ldgp"] = _linked_curve(models, ("dgp",) * 3, grid)

    report = {
        "experiment": "synthetic",
        "seed": int(config.seed),
        "criterion": str(config.criterion),
        "n_train": int(config.budget),
        "n_test": int(config.n_test),
        "nrmse": {},
        "coverage": {},
        "curves": {"x": grid[:, 0].tolist(), "truth": truth.tolist()},
    }
    for arm, (mean, sd) in curves.items():
        report["nrmse"][arm] = nrmse(mean, truth)
        report["coverage"][arm] = coverage(mean, sd, truth)
        report["curves"][arm] = {"mean": mean.tolist(), "sd": sd.tolist()}
    return report
