"""Growing an emulator of a cheap truth function to a design budget.

Both experiment drivers share this loop: train, score a fresh Latin
hypercube candidate set with an acquisition criterion, run the truth at
the winner, extend the design, repeat until the budget is reached, then
train a final model on the complete design.

Deep emulators support two refit styles between acquisitions. The
default retrains a fresh chain from the identity initialization at every
step, which is slower per step but immune to a degenerate latent state
acquired early (at very small designs the sampler can wander into a
white-noise mode and a continued chain never leaves it). The warm style
continues the existing chain for a short stretch instead and is used
where the per-step cost dominates; the closing full-protocol train is
what the returned model's quality rests on in either style.
"""

from dataclasses import replace

import numpy as np

from ..deep import DGPArchitecture, sem_train
from ..design import ALM, lhs, next_point
from ..gp import TrainOptions, train_gp

__all__ = ["grow_gp", "grow_dgp"]

# candidate streams salt their seed sequence with 100 + arm so they can
# never collide with the sampler lineages used inside sem_train
_CANDIDATE_STREAM = 100


def _candidate_set(box, n, seed, arm, step):
    return lhs(n, box, seed=[seed, _CANDIDATE_STREAM + arm, step])


def grow_gp(
    truth_fn,
    X0,
    box,
    budget,
    *,
    seed,
    arm,
    criterion=ALM,
    options=None,
    n_candidates=None,
):
    """Sequentially grow a plain GP emulator of truth_fn to the budget.

    truth_fn maps an (n, D) array to an (n,) output vector. Returns
    (model, X, y) with the design that produced the final fit.
    """
    options = options or TrainOptions()
    n_cand = int(n_candidates or 200 * box.ndim)
    X = np.atleast_2d(np.asarray(X0, dtype=float))
    y = np.asarray(truth_fn(X), dtype=float).ravel()
    step = 0
    while X.shape[0] < int(budget):
        model = train_gp(X, y, options)
        cands = _candidate_set(box, n_cand, seed, arm, step)
        pick = cands[next_point(model, cands, criterion)]
        X = np.vstack([X, pick])
        y = np.append(y, truth_fn(pick[None, :]))
        step += 1
    return train_gp(X, y, options), X, y


def grow_dgp(
    truth_fn,
    X0,
    box,
    budget,
    *,
    seed,
    arm,
    step_options,
    final_options,
    arch=None,
    initial_options=None,
    warm=False,
    final_warm=False,
    n_candidates=None,
):
    """Sequentially grow a deep emulator of truth_fn to the budget.

    step_options drives the between-acquisition refits and final_options
    the closing train on the complete design. With warm=True the refits
    continue the previous chain (initial_options, defaulting to
    final_options, builds the first chain); otherwise every refit is a
    fresh chain. final_warm chooses whether the closing train also
    continues the chain or starts fresh. All option sets are re-seeded
    with the experiment seed and pinned to the box so refits share one
    coordinate system. Acquisition is always by predictive variance.
    """
    n_cand = int(n_candidates or 200 * box.ndim)
    pin = {"seed": int(seed), "input_box": (box.lower, box.upper)}
    step_options = replace(step_options, **pin)
    final_options = replace(final_options, **pin)
    initial_options = replace(initial_options or final_options, **pin)

    X = np.atleast_2d(np.asarray(X0, dtype=float))
    y = np.asarray(truth_fn(X), dtype=float).ravel()
    arch = arch or DGPArchitecture.default(box.ndim)

    model = sem_train(X, y, arch, initial_options if warm else step_options)
    step = 0
    while X.shape[0] < int(budget):
        cands = _candidate_set(box, n_cand, seed, arm, step)
        pick = cands[next_point(model, cands, ALM)]
        X = np.vstack([X, pick])
        y = np.append(y, truth_fn(pick[None, :]))
        if X.shape[0] < int(budget):
            if warm:
                model = sem_train(X, y, arch, step_options, warm_from=model)
            else:
                model = sem_train(X, y, arch, step_options)
        step += 1
    if final_warm and X.shape[0] > X0.shape[0]:
        # the loop above leaves `model` one acquisition behind; extend it
        # with the last point before the closing stretch
        model = sem_train(X, y, arch, step_options, warm_from=model)
        model = sem_train(X, y, arch, final_options, warm_from=model)
    else:
        model = sem_train(X, y, arch, final_options)
    return model, X, y
