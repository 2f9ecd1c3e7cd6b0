"""Deep (layered) emulators trained by stochastic imputation.

A deep emulator stacks fully connected layers of zero-mean GP nodes; the
hidden layers' inputs and outputs are latent. Training alternates slice
sampling of the latent layers (an I-step) with per-node maximum-likelihood
refits holding the imputed values fixed (an M-step). After burn-in the
per-node hyperparameters are frozen (pointwise average by default) and a
set of spaced latent imputations is harvested; prediction mixes the exact
linked propagation over those imputations.

Internal nodes carry identity scalers so the zero-mean prior used by the
sampler is exactly the prior of the stored models; only the outer boundary
applies min-max input scaling and per-output standardization.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .accel import corr_matrix_impl
from .exceptions import NumericalError, ValidationError
from .gp import (
    GPModel,
    Prediction,
    TrainOptions,
    _chol_with_jitter,
    _validate_training_data,
    build_gp,
    linked_moments,
    model_to_dict,
    train_gp,
)
from .kernels import FAMILIES, SQUARED_EXPONENTIAL, KernelConfig
from .network import LinkedEmulator, mixture_moments, propagate_linked
from .scaling import InputScaler, OutputScaler

__all__ = [
    "DGPArchitecture",
    "DGPTrainOptions",
    "ImputationSet",
    "DGPModel",
    "EssResult",
    "ess_update",
    "sem_train",
    "harvest_imputations",
    "predict_dgp",
    "predict_dgp_batch",
    "link_ldgp",
    "predict_ldgp",
    "dgp_to_dict",
    "dgp_from_dict",
]

_BRACKET_COLLAPSE = 1e-12
_MAX_PROPOSALS = 10_000


@dataclass(frozen=True)
class DGPArchitecture:
    """Layer sizes and kernel families of a deep emulator.

    widths[k] is the node count of layer k+1; the last entry is the output
    width. families holds one kernel family per layer; every layer except
    the first consumes latent (stochastic) inputs and must therefore use
    the squared-exponential family.
    """

    depth: int
    widths: tuple
    families: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        fams = self.families or (SQUARED_EXPONENTIAL,) * self.depth
        object.__setattr__(self, "families", tuple(fams))
        if self.depth < 2:
            raise ValidationError("depth must be >= 2 (use a plain GP otherwise)")
        if len(self.widths) != self.depth:
            raise ValidationError("widths must list one entry per layer")
        if any(w < 1 for w in self.widths):
            raise ValidationError("layer widths must be >= 1")
        if len(self.families) != self.depth:
            raise ValidationError("families must list one entry per layer")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ValidationError(f"unknown kernel family: {fam!r}")
        for fam in self.families[1:]:
            if fam != SQUARED_EXPONENTIAL:
                raise ValidationError(
                    "layers past the first see latent inputs and must use the "
                    "squared-exponential family"
                )

    @classmethod
    def default(cls, input_dim, depth=2, output_dim=1):
        """Hidden widths equal to the input dimension, all squared-exponential."""
        widths = (int(input_dim),) * (depth - 1) + (int(output_dim),)
        return cls(depth=depth, widths=widths)

    @property
    def hidden_widths(self):
        return self.widths[:-1]

    @property
    def output_width(self):
        return self.widths[-1]


@dataclass
class DGPTrainOptions:
    """Knobs for sem_train.

    iterations/burnin control the alternating sampler; after burn-in the
    hyperparameter trajectory is reduced by `finalize` ("average" or
    "last"), then n_imputations latent draws spaced `spacing` sweeps apart
    are harvested with the hyperparameters frozen. Every refit runs
    `m_step_starts` optimizer starts, the warm configuration first and the
    rest from a seeded stream, so a fit that drifts toward a degenerate
    basin gets pulled back whenever a better one exists.
    input_box pins the boundary input scaler to an explicit (lo, hi) box,
    which sequential designs use so that refits keep a fixed coordinate
    system.
    """

    iterations: int = 200
    burnin: int = 150
    n_imputations: int = 50
    spacing: int = 5
    seed: int = 0
    nugget: str = "fixed"
    nugget_value: float = 1e-8
    m_step_starts: int = 10
    m_step_maxiter: int = 30
    finalize: str = "average"
    input_box: tuple | None = None
    initial_lengthscale: float = 1.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not 0 <= self.burnin < self.iterations:
            raise ValidationError("burnin must satisfy 0 <= burnin < iterations")
        if self.n_imputations < 1:
            raise ValidationError("n_imputations must be >= 1")
        if self.spacing < 1:
            raise ValidationError("spacing must be >= 1")
        if self.finalize not in ("average", "last"):
            raise ValidationError("finalize must be 'average' or 'last'")
        if self.initial_lengthscale <= 0:
            raise ValidationError("initial_lengthscale must be positive")


@dataclass
class ImputationSet:
    """Retained latent draws: samples[i][l] is the (M, P_{l+1}) matrix of
    hidden layer l+1 under imputation i."""

    samples: list
    seed_lineage: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.samples)


class EssResult:
    """Outcome of one elliptical slice update."""

    __slots__ = ("state", "loglik", "threshold", "n_proposals", "collapsed")

    def __init__(self, state, loglik, threshold, n_proposals, collapsed):
        self.state = state
        self.loglik = loglik
        self.threshold = threshold
        self.n_proposals = n_proposals
        self.collapsed = collapsed


def ess_update(state, sample_prior, log_lik, rng):
    """One elliptical slice sampling update of a zero-mean Gaussian block.

    Draws an auxiliary prior sample nu, sets the log threshold at the
    current state's likelihood plus log u, then walks proposals
    state*cos(theta) + nu*sin(theta) with theta drawn from [theta0 - 2pi,
    theta0], shrinking the bracket toward zero after each rejection. All
    threshold arithmetic stays in log space.

    Anchoring the threshold at the current state is what guarantees
    acceptance: as the bracket shrinks toward zero the proposal tends to
    the current state, whose likelihood always clears its own value plus
    log u. The update therefore terminates with probability one; as a
    safeguard against floating-point stalls it returns the current state
    (flagged `collapsed`) if the bracket width falls below 1e-12 or the
    proposal count hits 10000, which is the limiting behavior of the
    shrinking bracket.
    """
    state = np.asarray(state, dtype=float)
    current_ll = float(log_lik(state))
    if not math.isfinite(current_ll):
        raise NumericalError("non-finite likelihood at the current latent state")
    nu = sample_prior(rng)
    u = rng.uniform()
    threshold = current_ll + math.log(u)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = theta - 2.0 * math.pi, theta
    n = 0
    while True:
        n += 1
        proposal = state * math.cos(theta) + nu * math.sin(theta)
        ll = float(log_lik(proposal))
        if ll > threshold:
            return EssResult(proposal, ll, threshold, n, False)
        if hi - lo < _BRACKET_COLLAPSE or n >= _MAX_PROPOSALS:
            return EssResult(state, current_ll, threshold, n, True)
        if theta < 0.0:
            lo = theta
        else:
            hi = theta
        theta = rng.uniform(lo, hi)


class DGPModel:
    """A trained deep emulator.

    Stores the raw design, boundary scalers, frozen per-node
    hyperparameters (configs[l][p], sigma2s[l][p]) and the harvested
    latent imputations. Per-imputation internal GP nodes are materialized
    lazily and cached.
    """

    def __init__(
        self,
        arch,
        X,
        y,
        in_scaler,
        out_scalers,
        configs,
        sigma2s,
        imputations,
        chain_state,
        seed_lineage,
    ):
        self.arch = arch
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.in_scaler = in_scaler
        self.out_scalers = list(out_scalers)
        self.configs = configs
        self.sigma2s = sigma2s
        self.imputations = imputations
        self.chain_state = chain_state
        self.seed_lineage = dict(seed_lineage)
        self.Xs = in_scaler.transform(self.X)
        Y2 = self.y[:, None] if self.y.ndim == 1 else self.y
        self.Ys = np.column_stack(
            [self.out_scalers[p].transform(Y2[:, p]) for p in range(Y2.shape[1])]
        )
        self._validate_shapes()
        self._eval_cache = {}

    def _validate_shapes(self):
        arch = self.arch
        M = self.Xs.shape[0]
        if self.Ys.shape[1] != arch.output_width:
            raise ValidationError(
                f"output width {self.Ys.shape[1]} does not match architecture "
                f"terminal width {arch.output_width}"
            )
        if len(self.configs) != arch.depth:
            raise ValidationError("configs must hold one list per layer")
        for l, width in enumerate(arch.widths):
            if len(self.configs[l]) != width or len(self.sigma2s[l]) != width:
                raise ValidationError(f"layer {l + 1} expects {width} node configs")
        for i, sample in enumerate(self.imputations.samples):
            if len(sample) != arch.depth - 1:
                raise ValidationError(f"imputation {i} misses hidden layers")
            for l, W in enumerate(sample):
                if W.shape != (M, arch.widths[l]):
                    raise ValidationError(
                        f"imputation {i} layer {l + 1} has shape {W.shape}, "
                        f"expected {(M, arch.widths[l])}"
                    )

    @property
    def ndim(self):
        return self.Xs.shape[1]

    @property
    def n_points(self):
        return self.Xs.shape[0]

    @property
    def output_width(self):
        return self.arch.output_width

    @property
    def n_imputations(self):
        return self.imputations.n

    @property
    def families(self):
        return list(self.arch.families)

    def _cores(self, i):
        """All internal GP nodes implied by imputation i (identity scalers)."""
        latents = self.imputations.samples[i]
        cores = []
        Z = self.Xs
        for l in range(self.arch.depth):
            targets = latents[l] if l < self.arch.depth - 1 else self.Ys
            layer = []
            for p in range(self.arch.widths[l]):
                layer.append(
                    GPModel(
                        Z,
                        targets[:, p],
                        self.configs[l][p],
                        self.sigma2s[l][p],
                        InputScaler.identity(Z.shape[1]),
                        OutputScaler.identity(),
                    )
                )
            cores.append(layer)
            Z = targets
        return cores

    def evaluator(self, i):
        """Evaluator over raw-unit input moments for imputation i."""
        if not 0 <= i < self.n_imputations:
            raise ValidationError(
                f"imputation index {i} out of range (have {self.n_imputations})"
            )
        if i not in self._eval_cache:
            self._eval_cache[i] = _DGPEval(self, self._cores(i))
        return self._eval_cache[i]


class _DGPEval:
    def __init__(self, model, cores):
        self.model = model
        self.cores = cores

    @property
    def width(self):
        return self.model.output_width

    @property
    def input_box(self):
        sc = self.model.in_scaler
        return sc.lo, sc.hi

    def moments(self, mu, var):
        m, v = self.model.in_scaler.transform_moments(mu, var)
        for layer in self.cores:
            ms, vs = [], []
            for core in layer:
                mm, vv = linked_moments(core, m, v)
                ms.append(mm)
                vs.append(vv)
            m = np.column_stack(ms)
            v = np.column_stack(vs)
        out_m = np.empty_like(m)
        out_v = np.empty_like(v)
        for p, sc in enumerate(self.model.out_scalers):
            out_m[:, p], out_v[:, p] = sc.inverse_moments(m[:, p], v[:, p])
        return out_m, out_v


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _init_latent(Z_prev, width):
    """Identity passthrough start, padding extra columns with the first
    principal direction's scores when the layer is wider than its input."""
    M, D = Z_prev.shape
    cols = [Z_prev[:, p] for p in range(min(D, width))]
    if width > D:
        centered = Z_prev - Z_prev.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        scores = centered @ vt[0]
        span = scores.max() - scores.min()
        scores = (scores - scores.min()) / (span if span > 0 else 1.0)
        for _ in range(width - D):
            cols.append(scores.copy())
    return np.column_stack(cols)


def _layer_inputs(Xs, latents, l):
    """Inputs seen by layer l (1-based)."""
    return Xs if l == 1 else latents[l - 2]


def _gaussian_loglik(W, data, config, sigma2):
    M = W.shape[0]
    try:
        chol = _chol_with_jitter(
            corr_matrix_impl(
                np.ascontiguousarray(W), config.gamma, config.eta, config.family_code
            )
        )
    except NumericalError:
        return -math.inf
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    alpha = cho_solve(chol, data, check_finite=False)
    quad = float(data @ alpha)
    return -0.5 * (M * math.log(sigma2) + logdet + quad / sigma2) - 0.5 * M * math.log(
        2.0 * math.pi
    )


def _sweep(Xs, Ys, latents, configs, sigma2s, rng_for_layer):
    """One full slice-sampling pass over all hidden layers, in place."""
    depth = len(configs)
    M = Xs.shape[0]
    for l in range(1, depth):  # hidden layers, 1-based
        Z_prev = _layer_inputs(Xs, latents, l)
        Zc = np.ascontiguousarray(Z_prev)
        layer_cfg = configs[l - 1]
        layer_s2 = sigma2s[l - 1]
        prior_chols = [
            np.tril(
                _chol_with_jitter(
                    corr_matrix_impl(Zc, c.gamma, c.eta, c.family_code)
                )[0]
            )
            for c in layer_cfg
        ]

        def sample_prior(rng):
            cols = [
                math.sqrt(layer_s2[p]) * (prior_chols[p] @ rng.standard_normal(M))
                for p in range(len(layer_cfg))
            ]
            return np.column_stack(cols)

        next_cfg = configs[l]
        next_s2 = sigma2s[l]
        data_next = Ys if l == depth - 1 else latents[l]

        def log_lik(W):
            total = 0.0
            for p in range(len(next_cfg)):
                total += _gaussian_loglik(W, data_next[:, p], next_cfg[p], next_s2[p])
                if not math.isfinite(total):
                    return -math.inf
            return total

        result = ess_update(latents[l - 1], sample_prior, log_lik, rng_for_layer(l))
        latents[l - 1] = result.state


def _m_step(Xs, Ys, latents, configs, sigma2s, arch, options, n_starts=1):
    """Refit every node on the imputed input/output pairs.

    The current hyperparameters always seed the first optimizer start, so
    n_starts=1 is a plain warm refit. The training loop passes a real
    multi-start: the profile likelihood over sampled latents is multimodal
    (a narrow data-fitting basin, a long-lengthscale ridge, and a
    white-noise basin at the short-lengthscale bound), and a chain whose
    warm fit slides into a degenerate basin stops feeling the data, which
    lets the latent layer collapse. Restarts make that slide self-correct
    while leaving a warm fit that is already best untouched.
    """
    depth = arch.depth
    for l in range(1, depth + 1):
        Z_prev = _layer_inputs(Xs, latents, l)
        targets = latents[l - 1] if l < depth else Ys
        for p in range(arch.widths[l - 1]):
            fitted = train_gp(
                Z_prev,
                targets[:, p],
                TrainOptions(
                    family=arch.families[l - 1],
                    n_starts=n_starts,
                    seed=0,
                    nugget=options.nugget,
                    nugget_value=options.nugget_value,
                    init=configs[l - 1][p],
                    scale_inputs=False,
                    standardize_output=False,
                    maxiter=options.m_step_maxiter,
                ),
            )
            configs[l - 1][p] = fitted.config
            sigma2s[l - 1][p] = fitted.sigma2


def _harvest(Xs, Ys, latents, configs, sigma2s, seed, round_index, n, spacing):
    samples = []
    sweep_no = 0
    for _ in range(n):
        for _ in range(spacing):
            sweep_no += 1

            def rng_for_layer(l, _j=sweep_no):
                return np.random.default_rng([seed, 2, round_index, _j, l])

            _sweep(Xs, Ys, latents, configs, sigma2s, rng_for_layer)
        samples.append([W.copy() for W in latents])
    return samples


def sem_train(X, y, arch=None, options=None, warm_from=None):
    """Train a deep emulator by alternating imputation and refitting.

    Each iteration runs one slice-sampling sweep of the hidden layers
    followed by a refit of every node on the imputed input/output pairs,
    multi-started from the current hyperparameters plus seeded restarts.
    Hyperparameters recorded after burn-in are reduced per
    `options.finalize`, frozen, and used to harvest spaced latent
    imputations for prediction.

    warm_from continues from an existing model: its scalers, kernel
    configurations and final latent state are reused, and rows beyond the
    previous design get identity-initialized latents. The grown design
    must extend the previous one row for row.
    """
    options = options or DGPTrainOptions()
    y_arr = np.asarray(y, dtype=float)
    Y2 = y_arr[:, None] if y_arr.ndim == 1 else y_arr
    X2 = np.asarray(X, dtype=float)
    for p in range(Y2.shape[1]):
        _validate_training_data(X2, Y2[:, p])
    if arch is None:
        arch = (
            warm_from.arch
            if warm_from is not None
            else DGPArchitecture.default(X2.shape[1], output_dim=Y2.shape[1])
        )
    if arch.output_width != Y2.shape[1]:
        raise ValidationError(
            f"architecture terminal width {arch.output_width} does not match "
            f"y width {Y2.shape[1]}"
        )

    if warm_from is not None:
        if warm_from.arch != arch:
            raise ValidationError("warm start requires the same architecture")
        M_old = warm_from.n_points
        if X2.shape[0] < M_old or not np.array_equal(X2[:M_old], warm_from.X):
            raise ValidationError(
                "warm start requires the new design to extend the previous one"
            )
        in_scaler = warm_from.in_scaler
        out_scalers = warm_from.out_scalers
        seed = warm_from.seed_lineage["seed"]
        sweep_base = warm_from.seed_lineage["sweeps"]
        harvest_rounds = warm_from.seed_lineage["harvest_rounds"]
    else:
        if options.input_box is not None:
            lo = np.asarray(options.input_box[0], dtype=float)
            hi = np.asarray(options.input_box[1], dtype=float)
            in_scaler = InputScaler(lo, hi)
        else:
            in_scaler = InputScaler.fit(X2)
        out_scalers = [OutputScaler.fit(Y2[:, p]) for p in range(Y2.shape[1])]
        seed = options.seed
        sweep_base = 0
        harvest_rounds = 0

    Xs = in_scaler.transform(X2)
    Ys = np.column_stack(
        [out_scalers[p].transform(Y2[:, p]) for p in range(Y2.shape[1])]
    )
    M = Xs.shape[0]

    # latent start: identity passthrough (extend the warm chain state row-wise)
    latents = []
    Z = Xs
    for l in range(1, arch.depth):
        W = _init_latent(Z, arch.widths[l - 1])
        if warm_from is not None:
            W[: warm_from.n_points] = warm_from.chain_state[l - 1]
        latents.append(W)
        Z = W

    if warm_from is not None:
        configs = [list(layer) for layer in warm_from.configs]
        sigma2s = [list(layer) for layer in warm_from.sigma2s]
    else:
        # Neutral start: fixed lengthscales with the closed-form profile
        # scale, no optimizer. Fitting the identity-initialized latents by
        # maximum likelihood would chase the long-lengthscale ridge that
        # exactly-linear data rewards; the first real refit below sees
        # swept latents instead, whose ellipse noise a tiny fixed nugget
        # cannot absorb, so the lengthscales stay finite. Hidden layers
        # start at options.initial_lengthscale: that prior sets how wiggly
        # the very first elliptical proposals are, and a shorter value
        # lets the sampler reach strongly warped configurations that
        # near-linear proposals would never visit. The output layer always
        # starts at 1 so the response surface itself begins smooth.
        configs = []
        sigma2s = []
        for l in range(1, arch.depth + 1):
            Z_prev = _layer_inputs(Xs, latents, l)
            targets = latents[l - 1] if l < arch.depth else Ys
            start = options.initial_lengthscale if l < arch.depth else 1.0
            layer_cfg = []
            layer_s2 = []
            for p in range(arch.widths[l - 1]):
                cfg = KernelConfig(
                    arch.families[l - 1],
                    np.full(Z_prev.shape[1], start),
                    options.nugget_value,
                )
                seeded = build_gp(
                    Z_prev,
                    targets[:, p],
                    cfg,
                    scale_inputs=False,
                    standardize_output=False,
                )
                layer_cfg.append(seeded.config)
                layer_s2.append(seeded.sigma2)
            configs.append(layer_cfg)
            sigma2s.append(layer_s2)

    history = []
    for t in range(1, options.iterations + 1):
        sweep_no = sweep_base + t

        def rng_for_layer(l, _t=sweep_no):
            return np.random.default_rng([seed, 1, _t, l])

        _sweep(Xs, Ys, latents, configs, sigma2s, rng_for_layer)
        _m_step(
            Xs,
            Ys,
            latents,
            configs,
            sigma2s,
            arch,
            options,
            n_starts=options.m_step_starts,
        )
        if t > options.burnin:
            history.append(
                (
                    [[c.gamma.copy() for c in layer] for layer in configs],
                    [[c.eta for c in layer] for layer in configs],
                    [list(layer) for layer in sigma2s],
                )
            )

    if options.finalize == "average" and history:
        for l in range(arch.depth):
            for p in range(arch.widths[l]):
                gam = np.mean([h[0][l][p] for h in history], axis=0)
                eta = float(np.mean([h[1][l][p] for h in history]))
                configs[l][p] = KernelConfig(arch.families[l], gam, eta)
                sigma2s[l][p] = float(np.mean([h[2][l][p] for h in history]))

    samples = _harvest(
        Xs,
        Ys,
        latents,
        configs,
        sigma2s,
        seed,
        harvest_rounds,
        options.n_imputations,
        options.spacing,
    )
    lineage = {
        "seed": seed,
        "sweeps": sweep_base + options.iterations,
        "harvest_rounds": harvest_rounds + 1,
    }
    return DGPModel(
        arch,
        X2,
        y_arr,
        in_scaler,
        out_scalers,
        configs,
        sigma2s,
        ImputationSet(samples, dict(lineage)),
        [W.copy() for W in latents],
        lineage,
    )


def harvest_imputations(model, n, spacing=5):
    """Draw a fresh imputation set from a trained model's frozen chain.

    Continues the stored latent state with the model's own seed lineage
    (each harvest round uses an independent substream) and returns a new
    model carrying the n spaced draws; the original is left untouched.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    latents = [W.copy() for W in model.chain_state]
    round_index = model.seed_lineage["harvest_rounds"]
    samples = _harvest(
        model.Xs,
        model.Ys,
        latents,
        model.configs,
        model.sigma2s,
        model.seed_lineage["seed"],
        round_index,
        n,
        spacing,
    )
    lineage = dict(model.seed_lineage)
    lineage["harvest_rounds"] = round_index + 1
    return DGPModel(
        model.arch,
        model.X,
        model.y,
        model.in_scaler,
        model.out_scalers,
        model.configs,
        model.sigma2s,
        ImputationSet(samples, dict(lineage)),
        latents,
        lineage,
    )


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def predict_dgp_batch(model, Xq, n_imputations=None):
    """Mixture prediction over imputations at raw-unit query rows.

    Returns (means, vars) with shape (B, output_width).
    """
    N = model.n_imputations if n_imputations is None else int(n_imputations)
    if not 1 <= N <= model.n_imputations:
        raise ValidationError(
            f"n_imputations must be in [1, {model.n_imputations}], got {N}"
        )
    Xq = np.asarray(Xq, dtype=float)
    if Xq.ndim == 1:
        Xq = Xq[:, None] if model.ndim == 1 else Xq[None, :]
    if Xq.shape[1] != model.ndim:
        raise ValidationError(
            f"query has {Xq.shape[1]} columns, model expects {model.ndim}"
        )
    if not np.all(np.isfinite(Xq)):
        raise ValidationError("query contains non-finite values")
    zero = np.zeros_like(Xq)
    comp_m = []
    comp_v = []
    for i in range(N):
        m, v = model.evaluator(i).moments(Xq, zero)
        comp_m.append(m)
        comp_v.append(v)
    return mixture_moments(comp_m, comp_v)


def predict_dgp(model, xstar, n_imputations=None):
    """Single-query prediction; one Prediction per output dimension."""
    x = np.atleast_1d(np.asarray(xstar, dtype=float))
    means, variances = predict_dgp_batch(model, x[None, :], n_imputations)
    preds = [
        Prediction(float(means[0, p]), float(variances[0, p]))
        for p in range(means.shape[1])
    ]
    return preds[0] if len(preds) == 1 else preds


def link_ldgp(emulators, spec, n_imputations=None):
    """Bind per-node emulators (plain or deep) into a linked network.

    Each deep node contributes its own independently drawn imputations;
    imputation i of the network pairs the i-th stored draw of every deep
    node, and plain GP nodes participate unchanged in every component.
    """
    return LinkedEmulator(spec, emulators, n_imputations)


def predict_ldgp(emulator, xstar, n_imputations=None):
    """Mixture propagation through a linked network of deep/plain nodes."""
    if n_imputations is not None and n_imputations != emulator.n_imputations:
        emulator = LinkedEmulator(emulator.spec, emulator.emulators, n_imputations)
    return propagate_linked(emulator, xstar)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def dgp_to_dict(model):
    """JSON-ready dict; inner nodes are stored as full GP records whose
    designs come from imputation 0 (the canonical sample in use)."""
    cores = model._cores(0)
    nodes = [[model_to_dict(core) for core in layer] for layer in cores]
    return {
        "arch": {
            "depth": model.arch.depth,
            "widths": list(model.arch.widths),
            "families": list(model.arch.families),
        },
        "nodes": nodes,
        "imputations": [
            [W.tolist() for W in sample] for sample in model.imputations.samples
        ],
        "chain_state": [W.tolist() for W in model.chain_state],
        "seed_lineage": model.seed_lineage,
        "X": model.X.tolist(),
        "y": model.y.tolist(),
        "scalers": {
            "input": model.in_scaler.to_dict(),
            "outputs": [sc.to_dict() for sc in model.out_scalers],
        },
    }


def dgp_from_dict(d):
    try:
        arch = DGPArchitecture(
            depth=int(d["arch"]["depth"]),
            widths=tuple(d["arch"]["widths"]),
            families=tuple(d["arch"]["families"]),
        )
        configs = []
        sigma2s = []
        for l, layer in enumerate(d["nodes"]):
            layer_cfg = []
            layer_s2 = []
            for entry in layer:
                layer_cfg.append(
                    KernelConfig(
                        entry["family"],
                        np.asarray(entry["gamma"], dtype=float),
                        float(entry["eta"]),
                    )
                )
                layer_s2.append(float(entry["sigma2"]))
            configs.append(layer_cfg)
            sigma2s.append(layer_s2)
        samples = [
            [np.asarray(W, dtype=float) for W in sample]
            for sample in d["imputations"]
        ]
        chain_state = [np.asarray(W, dtype=float) for W in d["chain_state"]]
        in_scaler = InputScaler.from_dict(d["scalers"]["input"])
        out_scalers = [OutputScaler.from_dict(s) for s in d["scalers"]["outputs"]]
        return DGPModel(
            arch,
            np.asarray(d["X"], dtype=float),
            np.asarray(d["y"], dtype=float),
            in_scaler,
            out_scalers,
            configs,
            sigma2s,
            ImputationSet(samples, dict(d.get("seed_lineage", {}))),
            chain_state,
            d["seed_lineage"],
        )
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed deep model record: {e}") from e
