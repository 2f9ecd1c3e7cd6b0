"""Feed-forward networks of emulator nodes and linked propagation.

A network is a DAG of emulator nodes arranged in layers. Each node consumes
any mix of global input dimensions and outputs of strictly-earlier nodes
(skip connections and global pass-throughs are allowed), so the graph does
not have to be strictly layered. Evaluation walks the nodes in (layer,
index) order; because every node only reads finished upstream results, a
permutation of the declaration order cannot change any number.

Propagation pushes a deterministic global query through the network: each
node receives its inputs as independent normals (globals have zero
variance) and emits its closed-form predictive mean and variance, which
feed the next layer. Nodes backed by a deep model are handled by mixing
this same walk over that model's stored imputations.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ValidationError
from .gp import GPModel, Prediction, linked_moments
from .kernels import SQUARED_EXPONENTIAL

__all__ = [
    "NodeRef",
    "InputSource",
    "NodeSpec",
    "NetworkSpec",
    "ValidationReport",
    "LinkedEmulator",
    "PropagationMap",
    "mixture_moments",
    "validate_network",
    "propagate_linked",
    "propagate_linked_batch",
    "network_to_dict",
    "network_from_dict",
]


def mixture_moments(means, variances):
    """Moments of an equally weighted normal mixture.

    means and variances stack the component moments along axis 0. The
    variance is evaluated in within-plus-between form, mean(v) +
    mean((m - mean)^2), which is algebraically the usual second-moment
    expression but never goes negative and is exact for one component.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    mu = means.mean(axis=0)
    var = variances.mean(axis=0) + np.square(means - mu).mean(axis=0)
    return mu, var


@dataclass(frozen=True, order=True)
class NodeRef:
    """Position of a node: layer (1-based) and index within the layer."""

    layer: int
    index: int


@dataclass(frozen=True)
class InputSource:
    """One input wire of a node.

    kind "global" reads dimension `dim` of the network query; kind "node"
    reads output `out` of the upstream node `node`.
    """

    kind: str
    dim: int = -1
    node: NodeRef | None = None
    out: int = 0

    @classmethod
    def global_input(cls, dim):
        return cls(kind="global", dim=int(dim))

    @classmethod
    def node_output(cls, ref, out=0):
        return cls(kind="node", node=ref, out=int(out))


@dataclass(frozen=True)
class NodeSpec:
    ref: NodeRef
    inputs: tuple
    emulator_kind: str = "gp"  # "gp" or "dgp"
    output_width: int = 1
    node_id: str = ""
    model_path: str = ""

    def __post_init__(self):
        if not self.node_id:
            object.__setattr__(self, "node_id", f"n{self.ref.layer}_{self.ref.index}")
        object.__setattr__(self, "inputs", tuple(self.inputs))

    @property
    def has_stochastic_inputs(self):
        return any(s.kind == "node" for s in self.inputs)


@dataclass
class NetworkSpec:
    nodes: list

    def __post_init__(self):
        self.nodes = sorted(self.nodes, key=lambda n: n.ref)

    @property
    def refs(self):
        return [n.ref for n in self.nodes]

    @property
    def n_global(self):
        dims = [s.dim for n in self.nodes for s in n.inputs if s.kind == "global"]
        return max(dims) + 1 if dims else 0

    @property
    def terminal_refs(self):
        last = max(n.ref.layer for n in self.nodes)
        return [n.ref for n in self.nodes if n.ref.layer == last]

    def node(self, ref):
        for n in self.nodes:
            if n.ref == ref:
                return n
        raise KeyError(ref)


@dataclass
class ValidationReport:
    problems: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.problems

    def add(self, msg):
        self.problems.append(msg)


def validate_network(spec, emulators=None):
    """Structural (and, with emulators bound, semantic) network validation.

    Reported violations include cycles (a node consuming a node at its own
    or a later layer), dangling sources, width mismatches, duplicate wires,
    and Matern kernels on nodes whose inputs are stochastic.
    """
    report = ValidationReport()
    if not spec.nodes:
        report.add("network has no nodes")
        return report
    seen = {}
    for node in spec.nodes:
        if node.ref in seen:
            report.add(f"duplicate node ref {node.ref}")
        seen[node.ref] = node
    ids = [n.node_id for n in spec.nodes]
    if len(set(ids)) != len(ids):
        report.add("duplicate node ids")
    for node in spec.nodes:
        ref = node.ref
        if ref.layer < 1 or ref.index < 0:
            report.add(f"{node.node_id}: illegal ref {ref}")
        if not node.inputs:
            report.add(f"{node.node_id}: node has no inputs")
        if node.emulator_kind not in ("gp", "dgp"):
            report.add(f"{node.node_id}: unknown emulator kind {node.emulator_kind!r}")
        if node.output_width < 1:
            report.add(f"{node.node_id}: output width must be >= 1")
        if len(set(node.inputs)) != len(node.inputs):
            report.add(f"{node.node_id}: duplicate input wire")
        for src in node.inputs:
            if src.kind == "global":
                if src.dim < 0:
                    report.add(f"{node.node_id}: negative global dim")
            elif src.kind == "node":
                if src.node == ref:
                    report.add(f"{node.node_id}: node consumes its own output (cycle)")
                elif src.node not in seen and src.node not in {n.ref for n in spec.nodes}:
                    report.add(f"{node.node_id}: dangling source {src.node}")
                elif src.node.layer >= ref.layer:
                    report.add(
                        f"{node.node_id}: consumes layer {src.node.layer} from layer "
                        f"{ref.layer} (cycle or non-causal wire)"
                    )
                else:
                    up = next((n for n in spec.nodes if n.ref == src.node), None)
                    if up is not None and not (0 <= src.out < up.output_width):
                        report.add(
                            f"{node.node_id}: upstream output index {src.out} out of "
                            f"range for {up.node_id} (width {up.output_width})"
                        )
            else:
                report.add(f"{node.node_id}: unknown input kind {src.kind!r}")

    if emulators is not None:
        for node in spec.nodes:
            model = emulators.get(node.ref)
            if model is None:
                report.add(f"{node.node_id}: no emulator bound")
                continue
            is_dgp = hasattr(model, "n_imputations")
            if is_dgp != (node.emulator_kind == "dgp"):
                report.add(f"{node.node_id}: emulator kind mismatch")
                continue
            if model.ndim != len(node.inputs):
                report.add(
                    f"{node.node_id}: model expects {model.ndim} inputs, node wires "
                    f"{len(node.inputs)}"
                )
            width = model.output_width if is_dgp else 1
            if width != node.output_width:
                report.add(
                    f"{node.node_id}: model output width {width} != declared "
                    f"{node.output_width}"
                )
            if node.has_stochastic_inputs:
                if is_dgp:
                    bad = any(f != SQUARED_EXPONENTIAL for f in model.families)
                else:
                    bad = model.config.family != SQUARED_EXPONENTIAL
                if bad:
                    report.add(
                        f"{node.node_id}: Matern kernel on a node with stochastic "
                        "inputs (no closed-form moments)"
                    )
    return report


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


class _GPEval:
    width = 1

    def __init__(self, model):
        self.model = model

    @property
    def input_box(self):
        sc = self.model.in_scaler
        return sc.lo, sc.hi

    def moments(self, mu, var):
        m, v = linked_moments(self.model, mu, var)
        return m[:, None], v[:, None]


class PropagationMap(dict):
    """NodeRef -> Prediction, with per-node extrapolation flags attached."""

    def __init__(self, *args, extrapolated=None, **kw):
        super().__init__(*args, **kw)
        self.extrapolated = extrapolated or {}


class LinkedEmulator:
    """A network spec bound to trained per-node emulators.

    emulators maps NodeRef to either a GPModel or a deep model exposing
    n_imputations / evaluator(i). Validation runs at construction.
    """

    def __init__(self, spec, emulators, n_imputations=None):
        report = validate_network(spec, emulators)
        if not report.ok:
            raise ValidationError("invalid network: " + "; ".join(report.problems))
        self.spec = spec
        self.emulators = dict(emulators)
        deep_counts = [
            m.n_imputations for m in self.emulators.values() if hasattr(m, "n_imputations")
        ]
        if n_imputations is None:
            n_imputations = min(deep_counts) if deep_counts else 1
        if deep_counts and n_imputations > min(deep_counts):
            raise ValidationError(
                f"requested {n_imputations} imputations but a node exposes only "
                f"{min(deep_counts)}"
            )
        self.n_imputations = int(n_imputations)

    @property
    def has_deep_nodes(self):
        return any(hasattr(m, "n_imputations") for m in self.emulators.values())

    def _eval_map(self, i):
        out = {}
        for ref, model in self.emulators.items():
            if hasattr(model, "n_imputations"):
                out[ref] = model.evaluator(i)
            else:
                out[ref] = _GPEval(model)
        return out


def _propagate_once(spec, eval_map, X):
    means, variances = {}, {}
    extrap = {}
    for node in spec.nodes:
        B = X.shape[0]
        D = len(node.inputs)
        mu = np.empty((B, D))
        var = np.zeros((B, D))
        for k, src in enumerate(node.inputs):
            if src.kind == "global":
                mu[:, k] = X[:, src.dim]
            else:
                mu[:, k] = means[src.node][:, src.out]
                var[:, k] = variances[src.node][:, src.out]
        ev = eval_map[node.ref]
        lo, hi = ev.input_box
        extrap[node.ref] = bool(np.any(mu < lo) or np.any(mu > hi))
        m, v = ev.moments(mu, var)
        means[node.ref] = m
        variances[node.ref] = v
    return means, variances, extrap


def propagate_linked_batch(emulator, X):
    """Propagate a batch of global queries, mixing over imputations.

    Returns (means, variances, extrapolated): dicts keyed by NodeRef with
    (B, Q) arrays, and per-node bool flags marking queries outside a
    node's trained box.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    spec = emulator.spec
    if X.shape[1] < spec.n_global:
        raise ValidationError(
            f"query has {X.shape[1]} dims, network reads dim {spec.n_global - 1}"
        )
    if not np.all(np.isfinite(X)):
        raise ValidationError("query contains non-finite values")
    N = emulator.n_imputations if emulator.has_deep_nodes else 1
    comp_m = {}
    comp_v = {}
    extrap = {}
    for i in range(N):
        means, variances, ex = _propagate_once(spec, emulator._eval_map(i), X)
        for ref in means:
            comp_m.setdefault(ref, []).append(means[ref])
            comp_v.setdefault(ref, []).append(variances[ref])
            extrap[ref] = extrap.get(ref, False) or ex[ref]
    means = {}
    variances = {}
    for ref in comp_m:
        means[ref], variances[ref] = mixture_moments(comp_m[ref], comp_v[ref])
    return means, variances, extrap


def propagate_linked(emulator, xstar):
    """Single-query propagation: NodeRef -> Prediction for every node."""
    x = np.atleast_1d(np.asarray(xstar, dtype=float))
    means, variances, extrap = propagate_linked_batch(emulator, x[None, :])
    out = PropagationMap(extrapolated=extrap)
    for ref in means:
        q = means[ref].shape[1]
        if q == 1:
            out[ref] = Prediction(float(means[ref][0, 0]), float(variances[ref][0, 0]))
        else:
            out[ref] = [
                Prediction(float(means[ref][0, k]), float(variances[ref][0, k]))
                for k in range(q)
            ]
    return out


# ---------------------------------------------------------------------------
# JSON form
# ---------------------------------------------------------------------------


def network_to_dict(spec):
    nodes = []
    for n in spec.nodes:
        inputs = []
        for s in n.inputs:
            if s.kind == "global":
                inputs.append({"type": "global", "dim": s.dim})
            else:
                up = spec.node(s.node)
                inputs.append({"type": "node", "id": up.node_id, "out": s.out})
        nodes.append(
            {
                "id": n.node_id,
                "layer": n.ref.layer,
                "inputs": inputs,
                "emulator": n.emulator_kind,
                "model_path": n.model_path,
                "width": n.output_width,
            }
        )
    return {"nodes": nodes}


def network_from_dict(d):
    try:
        raw = d["nodes"]
        per_layer = {}
        refs_by_id = {}
        for entry in raw:
            layer = int(entry["layer"])
            idx = per_layer.get(layer, 0)
            per_layer[layer] = idx + 1
            refs_by_id[entry["id"]] = NodeRef(layer, idx)
        nodes = []
        for entry in raw:
            inputs = []
            for s in entry["inputs"]:
                if s["type"] == "global":
                    inputs.append(InputSource.global_input(s["dim"]))
                elif s["type"] == "node":
                    if s["id"] not in refs_by_id:
                        raise ValidationError(
                            f"node {entry['id']}: input references unknown id {s['id']!r}"
                        )
                    inputs.append(
                        InputSource.node_output(refs_by_id[s["id"]], s.get("out", 0))
                    )
                else:
                    raise ValidationError(f"unknown input type {s['type']!r}")
            nodes.append(
                NodeSpec(
                    ref=refs_by_id[entry["id"]],
                    inputs=tuple(inputs),
                    emulator_kind=entry.get("emulator", "gp"),
                    output_width=int(entry.get("width", 1)),
                    node_id=entry["id"],
                    model_path=entry.get("model_path", ""),
                )
            )
        return NetworkSpec(nodes)
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed network record: {e}") from e
