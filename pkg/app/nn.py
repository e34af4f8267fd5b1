# ───────────────────────────────────────────────────────────────────────────────
# app/nn.py
"""MLPs for the discriminator μ^θ and the generator G^ψ, plus Adam.

No normalization layers of any kind: the stability experiments are defined by
their absence. The discriminator emits a raw, unbounded score per sample.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from app.autodiff import (
    DEFAULT_LEAKY_SLOPE,
    Graph,
    Tensor,
    Var,
    add,
    as_tensor,
    elementwise,
    matmul,
    transpose,
)
from app.core import ConfigError, ContractViolation, DimensionError, GanLabError

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh")

# Adam defaults follow the DCGAN code the experiments were built on.
ADAM_LR = 2e-4
ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: Tuple[int, ...]
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"
    leaky_slope: float = DEFAULT_LEAKY_SLOPE

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ContractViolation(f"MlpSpec needs at least two sizes, got {self.layer_sizes}")
        if any(s <= 0 for s in self.layer_sizes):
            raise ContractViolation(f"MlpSpec sizes must be positive, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ContractViolation(
                f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}, got '{self.hidden_activation}'"
            )
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ContractViolation(
                f"output_activation must be one of {OUTPUT_ACTIVATIONS}, got '{self.output_activation}'"
            )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "leaky_slope": self.leaky_slope,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MlpSpec":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            hidden_activation=d.get("hidden_activation", "leaky_relu"),
            output_activation=d.get("output_activation", "identity"),
            leaky_slope=float(d.get("leaky_slope", DEFAULT_LEAKY_SLOPE)),
        )


@dataclass
class MlpParams:
    """Per layer a weight matrix W (out × in) and a bias vector b (out)."""
    weights: List[Tensor]
    biases: List[Tensor]

    def tensors(self) -> List[Tensor]:
        """Flat [W0, b0, W1, b1, ...] view; the order gradients and Adam use."""
        out: List[Tensor] = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def names(self) -> List[str]:
        out: List[str] = []
        for i in range(len(self.weights)):
            out.extend((f"layer{i}.W", f"layer{i}.b"))
        return out

    @classmethod
    def from_tensors(cls, tensors: Sequence[Tensor]) -> "MlpParams":
        if len(tensors) % 2:
            raise ContractViolation("MlpParams.from_tensors expects alternating W, b tensors")
        return cls(
            weights=[as_tensor(t) for t in tensors[0::2]],
            biases=[as_tensor(t) for t in tensors[1::2]],
        )

    def copy(self) -> "MlpParams":
        return MlpParams.from_tensors(self.tensors())

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.tensors():
            h.update(np.ascontiguousarray(t, dtype=np.float64).tobytes())
        return h.hexdigest()

    def check(self, spec: MlpSpec) -> None:
        if len(self.weights) != spec.num_layers or len(self.biases) != spec.num_layers:
            raise DimensionError(
                "MlpParams", (len(self.weights), len(self.biases)), (spec.num_layers, spec.num_layers)
            )
        for W, b, fan_in, fan_out in zip(
            self.weights, self.biases, spec.layer_sizes[:-1], spec.layer_sizes[1:]
        ):
            if W.shape != (fan_out, fan_in):
                raise DimensionError("MlpParams.W", W.shape, (fan_out, fan_in))
            if b.shape != (fan_out,):
                raise DimensionError("MlpParams.b", b.shape, (fan_out,))

    def bind(self, graph: Graph, trainable: bool = True) -> List[Var]:
        """Register every tensor on `graph`, as leaves or as constants."""
        register = graph.leaf if trainable else graph.constant
        return [register(t) for t in self.tensors()]


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases)


def _forward_graph(spec: MlpSpec, handles: Sequence[Var], x: Var) -> Var:
    h = x
    for layer in range(spec.num_layers):
        W, b = handles[2 * layer], handles[2 * layer + 1]
        h = add(matmul(h, transpose(W)), b)
        if layer < spec.num_layers - 1:
            slope = spec.leaky_slope if spec.hidden_activation == "leaky_relu" else None
            h = elementwise(spec.hidden_activation, h, alpha=slope)
        elif spec.output_activation == "tanh":
            h = elementwise("tanh", h)
    return h


def forward(
    spec: MlpSpec,
    params: Union[MlpParams, Sequence[Var]],
    x: Union[Tensor, Var],
) -> Union[Tensor, Var]:
    """Affine + activation per layer.

    With a Var input the pass is recorded on that Var's graph; `params` may then
    be the handles returned by MlpParams.bind (to differentiate through them) or
    plain MlpParams (registered as constants). With an array input the pass is
    evaluated on a throwaway graph and an array comes back.
    """
    shape = x.shape
    if len(shape) != 2 or shape[1] != spec.input_dim:
        raise DimensionError("forward", shape, ("batch", spec.input_dim))

    if isinstance(x, Var):
        handles = params.bind(x.graph, trainable=False) if isinstance(params, MlpParams) else params
        return _forward_graph(spec, handles, x)

    if not isinstance(params, MlpParams):
        raise ContractViolation("forward: array input needs MlpParams, not graph handles")
    graph = Graph()
    return _forward_graph(spec, params.bind(graph, trainable=False), graph.constant(x)).value


# ── Latent noise ──────────────────────────────────────────────────────────────

@dataclass
class LatentSampler:
    """z ~ N(0, I), deterministic per (seed, call sequence)."""
    dim: int
    seed: int
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ContractViolation(f"latent dim must be >= 1, got {self.dim}")
        self._rng = np.random.default_rng(self.seed)

    def sample(self, n: int) -> Tensor:
        if n < 1:
            raise ContractViolation(f"latent batch size must be >= 1, got {n}")
        return self._rng.standard_normal((n, self.dim))


def sample_latent(sampler: LatentSampler, n: int) -> Tensor:
    return sampler.sample(n)


# ── Adam ──────────────────────────────────────────────────────────────────────

@dataclass
class AdamState:
    m: List[Tensor]
    v: List[Tensor]
    t: int = 0
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = ADAM_LR, **hyper) -> "AdamState":
        tensors = params.tensors()
        return cls(
            m=[np.zeros_like(t) for t in tensors],
            v=[np.zeros_like(t) for t in tensors],
            lr=lr,
            **hyper,
        )


def adam_step(
    params: MlpParams, grads: Sequence[Tensor], state: AdamState
) -> Tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    tensors = params.tensors()
    if len(grads) != len(tensors):
        raise DimensionError("adam_step", (len(grads),), (len(tensors),))
    for p, g, m in zip(tensors, grads, state.m):
        if np.shape(g) != p.shape or m.shape != p.shape:
            raise DimensionError("adam_step", np.shape(g), p.shape)

    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(tensors, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_p.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(
        m=new_m, v=new_v, t=t, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return MlpParams.from_tensors(new_p), new_state


# ── Checkpoints ───────────────────────────────────────────────────────────────

def save_checkpoint(path: str | os.PathLike[str], networks: Dict[str, Tuple[MlpSpec, MlpParams]]) -> None:
    """JSON map network → {spec, layers: {name: {shape, values}}}, row-major values."""
    doc = {"networks": {}}
    for net_name, (spec, params) in networks.items():
        layers = {
            name: {"shape": list(t.shape), "values": t.ravel().tolist()}
            for name, t in zip(params.names(), params.tensors())
        }
        doc["networks"][net_name] = {"spec": spec.to_dict(), "layers": layers}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str | os.PathLike[str]) -> Dict[str, Tuple[MlpSpec, MlpParams]]:
    """Read a checkpoint; unparsable or structurally broken files raise ConfigError."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, field="checkpoint", line=e.lineno, column=e.colno) from e

    out: Dict[str, Tuple[MlpSpec, MlpParams]] = {}
    try:
        for net_name, entry in doc["networks"].items():
            spec = MlpSpec.from_dict(entry["spec"])
            tensors = []
            for i in range(spec.num_layers):
                for suffix in ("W", "b"):
                    layer = entry["layers"][f"layer{i}.{suffix}"]
                    tensors.append(np.array(layer["values"], dtype=np.float64).reshape(layer["shape"]))
            out[net_name] = (spec, MlpParams.from_tensors(tensors))
    except GanLabError:
        raise
    except (KeyError, TypeError, AttributeError, ValueError) as e:
        raise ConfigError(f"malformed checkpoint ({type(e).__name__}: {e})", field="checkpoint") from e
    for spec, params in out.values():
        params.check(spec)
    return out
