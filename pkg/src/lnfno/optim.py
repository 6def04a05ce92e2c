"""Parameter containers, fan-in initialization and AdamW with decay exclusion."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigurationError, ContractError
from .rng import Rng, stream_id

STREAM_INIT = 1

DECAYED = "decayed"
EXCLUDED = "excluded"


class ParamSet:
    """Ordered name -> Tensor map with a weight-decay class per entry.

    Biases and scale parameters are always ``excluded``; only weight
    tensors are ``decayed``.
    """

    def __init__(self):
        self._params = {}
        self._decay = {}

    def add(self, name, tensor, decay_class):
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        if decay_class not in (DECAYED, EXCLUDED):
            raise ConfigurationError(f"bad decay class {decay_class!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor
        self._decay[name] = decay_class
        return tensor

    def update(self, other):
        for name, t in other.items():
            self.add(name, t, other.decay_class(name))
        return self

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def decay_class(self, name):
        return self._decay[name]

    def count(self):
        """Total number of scalar parameters."""
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self):
        return {n: t.grad for n, t in self._params.items() if t.grad is not None}

    def arrays(self):
        return {n: t.data for n, t in self._params.items()}

    def load_arrays(self, arrays):
        for n, t in self._params.items():
            a = np.asarray(arrays[n], dtype=np.float64)
            if a.shape != t.shape:
                raise ContractError(f"shape mismatch loading {n}: {a.shape} != {t.shape}")
            t.data = a.copy()


def partition_decay(params):
    decayed = [n for n in params if params.decay_class(n) == DECAYED]
    excluded = [n for n in params if params.decay_class(n) == EXCLUDED]
    return decayed, excluded


@dataclass(frozen=True)
class LayerSpec:
    """A linear layer (``kernel=()``) or a convolution with the given kernel."""

    fan_in_features: int
    out_features: int
    kernel: tuple = ()

    @property
    def fan_in(self):
        return self.fan_in_features * int(np.prod(self.kernel, dtype=np.int64))

    @property
    def weight_shape(self):
        if self.kernel:
            return (self.out_features, self.fan_in_features) + tuple(self.kernel)
        return (self.fan_in_features, self.out_features)


def init_params(spec, seed, prefix, layer_index, bias=True):
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.

    ``layer_index`` selects the counter stream, so a layer's values depend
    only on (seed, layer_index) and not on construction order elsewhere.
    """
    if spec.fan_in <= 0 or spec.out_features <= 0:
        raise ConfigurationError(f"layer {prefix} has zero fan-in or width")
    bound = 1.0 / np.sqrt(spec.fan_in)
    rng = Rng(seed, stream_id(STREAM_INIT, layer_index))
    ps = ParamSet()
    ps.add(f"{prefix}.weight", Tensor(rng.uniform(-bound, bound, spec.weight_shape)), DECAYED)
    if bias:
        ps.add(f"{prefix}.bias", Tensor(np.zeros(spec.out_features)), EXCLUDED)
    return ps


def init_scale(name="alpha", value=1.0):
    ps = ParamSet()
    ps.add(name, Tensor(np.array(float(value))), EXCLUDED)
    return ps


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, state, lr, wd, grads=None):
    """One decoupled-weight-decay Adam step, updating ``params`` in place.

    Decay ``p <- p - lr*wd*p`` is applied to ``decayed`` entries only, then
    the bias-corrected Adam update to every entry.
    """
    if lr < 0:
        raise ContractError("learning rate must be non-negative")
    if grads is None:
        grads = {n: t.grad for n, t in params.items()}
    missing = [n for n in params if grads.get(n) is None]
    if missing:
        raise ContractError(f"missing gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        new = p.data
        if params.decay_class(name) == DECAYED and wd != 0.0:
            new = new - lr * wd * new
        new = new - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = new
    return params, state
