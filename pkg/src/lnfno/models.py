"""Linear-nonlinear fusion operators and the DeepONet baseline.

A fusion model maps input components through per-component conv encoders
to a latent code z, then predicts

    u_raw = alpha * (B_L(z) * B_N(z))

with an affine branch B_L (two stacked linear layers, no activation) and
a tanh MLP branch B_N, optionally followed by a conv decoder on the output
grid. Outputs are flat vectors; multi-field outputs are field-major.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError
from .optim import EXCLUDED, LayerSpec, ParamSet, init_params, init_scale

PRESETS = ("A", "B", "C", "D", "E")
DEEPONET_PRESETS = ("siso", "miso", "mimo")
ABLATIONS = ("full", "only_nonlinear", "only_linear", "no_encoder", "no_decoder",
             "no_enc_dec", "pure_nonlinear_mlp", "pure_linear_mlp")

ENC1D_KERNEL, ENC1D_PAD = 9, 4
ENC2D_KERNEL, ENC2D_PAD = 3, 1
DEC_KERNEL, DEC_PAD = 3, 1


def _parse_shape(text):
    return tuple(int(t) for t in text.split("x"))


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; widths default to the full-size layer tables.

    ``input_shapes`` holds one shape per input component (rank 1 for
    boundary traces, rank 2 for grid sources); ``output_shape`` is the
    output grid (``(n_fields, N, N)`` for multi-field presets, ``(n_p,)``
    for node outputs).
    """

    kind: str
    preset: str
    input_shapes: tuple
    output_shape: tuple
    ablation: str = "full"
    hidden: int = 256
    enc_channels: int = 64
    src_channels: int = 32
    dec_channels: int = 32
    pool: int = 8
    basis: int = 1024
    deeponet_depth: int = 5

    def __post_init__(self):
        object.__setattr__(self, "input_shapes", tuple(tuple(int(d) for d in s) for s in self.input_shapes))
        object.__setattr__(self, "output_shape", tuple(int(d) for d in self.output_shape))
        if self.kind == "lnfno":
            if self.preset not in PRESETS:
                raise ConfigurationError(f"unknown preset {self.preset!r}")
            if self.ablation not in ABLATIONS:
                raise ConfigurationError(f"unknown ablation {self.ablation!r}")
        elif self.kind == "deeponet":
            if self.preset not in DEEPONET_PRESETS:
                raise ConfigurationError(f"unknown deeponet variant {self.preset!r}")
            if self.ablation != "full":
                raise ConfigurationError("ablations apply to fusion models only")
        else:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        for name in ("hidden", "enc_channels", "src_channels", "dec_channels", "pool", "basis"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        self._check_layout()

    def _check_layout(self):
        """Component ranks and output rank allowed by each preset.

        Rank-1 components get the 1-D encoder and rank-2 components the 2-D
        encoder; the decoder works on the output grid of whatever rank.
        """
        ranks = [len(s) for s in self.input_shapes]
        out_rank = len(self.output_shape)
        rules = {
            "A": ([{1, 2}], {1, 2, 3}),
            "B": ([{1}, {2}], {2}),
            "C": ([{1, 2}], {1}),
            "D": ([{1}] * 3, {3}),
            "E": ([{1}], {3}),
            "siso": ([{1, 2}], {1, 2, 3}),
            "miso": ([{1, 2}, {1, 2}], {1, 2, 3}),
        }
        if self.preset == "mimo":
            ok = len(ranks) >= 1 and out_rank >= 2
        else:
            want, outs = rules[self.preset]
            ok = len(ranks) == len(want) and all(r in w for r, w in zip(ranks, want)) and out_rank in outs
        if not ok:
            raise ConfigurationError(f"preset {self.preset} does not accept inputs {self.input_shapes} "
                                     f"with output {self.output_shape}")
        if self.preset in ("D", "mimo") and self.output_shape[0] != 3:
            raise ConfigurationError(f"preset {self.preset} predicts three fields")

    @property
    def output_size(self):
        return int(np.prod(self.output_shape))

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "input_shapes":
                v = ";".join("x".join(str(d) for d in s) for s in v)
            elif f.name == "output_shape":
                v = "x".join(str(d) for d in v)
            out[f.name] = str(v)
        return out

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if f.name == "input_shapes":
                v = tuple(_parse_shape(s) for s in v.split(";"))
            elif f.name == "output_shape":
                v = _parse_shape(v)
            elif f.type is int:
                v = int(v)
            kw[f.name] = v
        return cls(**kw)


# ---------------------------------------------------------------- layer helpers

class _Builder:
    """Allocates named layers with one init stream per layer."""

    def __init__(self, seed):
        self.seed = seed
        self.params = ParamSet()
        self.index = 0

    def layer(self, name, fan_in, fan_out, kernel=(), bias=True):
        ps = init_params(LayerSpec(fan_in, fan_out, tuple(kernel)), self.seed, name, self.index, bias)
        self.index += 1
        self.params.update(ps)
        return name

    def weight(self, name):
        return self.params[f"{name}.weight"]

    def bias(self, name):
        key = f"{name}.bias"
        return self.params[key] if key in self.params else None


def _conv_out(length, kernel, stride, pad):
    return (length + 2 * pad - kernel) // stride + 1


@dataclass
class _ConvStack:
    names: list
    strides: list
    pads: list
    dims: int
    final_activation: bool


def _run_convs(model, stack, x):
    n = len(stack.names)
    for i, (name, s, p) in enumerate(zip(stack.names, stack.strides, stack.pads)):
        x = ad.conv_nd(x, model.weight(name), model.bias(name), stride=s, padding=p, dims=stack.dims)
        if i < n - 1 or stack.final_activation:
            x = ad.tanh(x)
    return x


# ---------------------------------------------------------------- fusion model

@dataclass
class LnfnoModel:
    spec: ModelSpec
    params: ParamSet
    encoders: list = field(default_factory=list)
    pools: list = field(default_factory=list)
    latent_dim: int = 0
    linear_branch: list = field(default_factory=list)
    nonlinear_branch: list = field(default_factory=list)
    decoder: object = None

    def weight(self, name):
        return self.params[f"{name}.weight"]

    def bias(self, name):
        key = f"{name}.bias"
        return self.params[key] if key in self.params else None

    def count(self):
        return self.params.count()

    def has_activation(self):
        if any(e is not None for e in self.encoders) or self.decoder is not None:
            return True
        return len(self.nonlinear_branch) > 0

    def __call__(self, inputs):
        return forward_lnfno(self, inputs)


def _uses_encoder(ablation):
    return ablation not in ("no_encoder", "no_enc_dec", "pure_nonlinear_mlp", "pure_linear_mlp")


def _uses_decoder(spec):
    if spec.preset == "C":
        return False
    return spec.ablation not in ("no_decoder", "no_enc_dec", "pure_nonlinear_mlp", "pure_linear_mlp")


def build_model(spec, seed=0):
    """Fusion model or DeepONet for ``spec``; parameters depend only on (spec, seed)."""
    if spec.kind == "deeponet":
        return build_deeponet(spec, seed)
    b = _Builder(seed)
    encoders, pools = [], []
    latent = 0
    use_enc = _uses_encoder(spec.ablation) and spec.preset != "E"
    for ci, shape in enumerate(spec.input_shapes):
        if not use_enc:
            encoders.append(None)
            pools.append(None)
            latent += int(np.prod(shape))
            continue
        names, strides, pads = [], [], []
        if len(shape) == 1:
            c_in, length = 1, shape[0]
            for li, stride in enumerate((1, 2, 2, 2)):
                names.append(b.layer(f"enc{ci}.conv{li}", c_in, spec.enc_channels, (ENC1D_KERNEL,)))
                strides.append(stride)
                pads.append(ENC1D_PAD)
                length = _conv_out(length, ENC1D_KERNEL, stride, ENC1D_PAD)
                c_in = spec.enc_channels
                if length < 1:
                    raise DimensionError(f"input {ci} of length {shape[0]} is too short for the encoder")
            encoders.append(_ConvStack(names, strides, pads, 1, True))
            pools.append(None)
            latent += spec.enc_channels * length
        else:
            c_in = 1
            for li in range(4):
                names.append(b.layer(f"enc{ci}.conv{li}", c_in, spec.src_channels, (ENC2D_KERNEL,) * 2))
                strides.append(2)
                pads.append(ENC2D_PAD)
                c_in = spec.src_channels
            encoders.append(_ConvStack(names, strides, pads, 2, True))
            pools.append((spec.pool, spec.pool))
            latent += spec.src_channels * spec.pool * spec.pool
    D = spec.output_size
    H = spec.hidden
    ab = spec.ablation
    lin, non = [], []
    if ab == "pure_linear_mlp":
        lin = [b.layer("linear.0", latent, D)]
    else:
        if ab not in ("only_nonlinear", "pure_nonlinear_mlp"):
            lin = [b.layer("linear.0", latent, H), b.layer("linear.1", H, D)]
        if ab not in ("only_linear",):
            non = [b.layer("nonlinear.0", latent, H), b.layer("nonlinear.1", H, H),
                   b.layer("nonlinear.2", H, D)]
    decoder = None
    if _uses_decoder(spec):
        channels = spec.output_shape[0] if spec.preset == "D" else 1
        grid_rank = len(spec.output_shape) - (1 if spec.preset == "D" else 0)
        k = (DEC_KERNEL,) * grid_rank
        names = [b.layer("dec.conv0", channels, spec.dec_channels, k),
                 b.layer("dec.conv1", spec.dec_channels, spec.dec_channels, k),
                 b.layer("dec.conv2", spec.dec_channels, channels, k)]
        decoder = _ConvStack(names, [1, 1, 1], [DEC_PAD] * 3, grid_rank, False)
    b.params.update(init_scale("alpha", 1.0))
    return LnfnoModel(spec, b.params, encoders, pools, latent, lin, non, decoder)


def _as_batch(x, shape, index):
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    size = int(np.prod(shape))
    if t.data.ndim < 2 or int(np.prod(t.shape[1:])) != size:
        raise DimensionError(f"input {index}: expected [batch, {'x'.join(map(str, shape))}], got {t.shape}")
    return t


def encode(model, inputs):
    """Latent code z [batch, d]: per-component encodings, channel-major, concatenated."""
    spec = model.spec
    if len(inputs) != len(spec.input_shapes):
        raise DimensionError(f"expected {len(spec.input_shapes)} input components, got {len(inputs)}")
    parts = []
    batch = None
    for ci, (x, shape, enc, pool) in enumerate(zip(inputs, spec.input_shapes, model.encoders, model.pools)):
        t = _as_batch(x, shape, ci)
        B = t.shape[0]
        if batch is not None and B != batch:
            raise DimensionError("input components disagree on batch size")
        batch = B
        if enc is None:
            parts.append(ad.reshape(t, (B, int(np.prod(shape)))))
            continue
        h = ad.reshape(t, (B, 1) + tuple(shape))
        h = _run_convs(model, enc, h)
        if pool is not None:
            h = ad.adaptive_avg_pool2d(h, pool)
        parts.append(ad.reshape(h, (B, int(np.prod(h.shape[1:])))))
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)


def _dense(model, names, z, activate_hidden):
    h = z
    for i, name in enumerate(names):
        h = ad.linear(h, model.weight(name), model.bias(name))
        if activate_hidden and i < len(names) - 1:
            h = ad.tanh(h)
    return h


def fuse(model, z):
    """u_raw = alpha * (B_L(z) * B_N(z)), dropping whichever branch is absent."""
    alpha = model.params["alpha"]
    parts = []
    if model.linear_branch:
        parts.append(_dense(model, model.linear_branch, z, False))
    if model.nonlinear_branch:
        parts.append(_dense(model, model.nonlinear_branch, z, True))
    core = parts[0] if len(parts) == 1 else ad.binary_ewise(parts[0], parts[1], "mul")
    return ad.binary_ewise(core, alpha, "mul")


def decode(model, u_raw):
    if model.decoder is None:
        return u_raw
    spec = model.spec
    B = u_raw.shape[0]
    grid = spec.output_shape if spec.preset == "D" else (1,) + spec.output_shape
    h = ad.reshape(u_raw, (B,) + tuple(grid))
    h = _run_convs(model, model.decoder, h)
    return ad.reshape(h, (B, spec.output_size))


def forward_lnfno(model, inputs):
    """Prediction [batch, D] on the normalized scale."""
    return decode(model, fuse(model, encode(model, inputs)))


# ---------------------------------------------------------------- DeepONet

@dataclass
class DeepOnetModel:
    spec: ModelSpec
    params: ParamSet
    branches: list
    trunk: list
    n_heads: int
    coords: np.ndarray

    def weight(self, name):
        return self.params[f"{name}.weight"]

    def bias(self, name):
        key = f"{name}.bias"
        return self.params[key] if key in self.params else None

    def count(self):
        return self.params.count()

    def __call__(self, inputs, coords=None):
        return forward_deeponet(self, inputs, coords)


def grid_coords(shape):
    """Node coordinates on [0,1]^d in row-major order, shape [prod(shape), d]."""
    axes = [np.linspace(0.0, 1.0, n) for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _mlp_names(b, prefix, n_in, width, n_out, depth):
    dims = [n_in] + [width] * (depth - 1) + [n_out]
    return [b.layer(f"{prefix}.{i}", a, c) for i, (a, c) in enumerate(zip(dims[:-1], dims[1:]))]


def build_deeponet(spec, seed=0, coords=None):
    """Branch/trunk networks of ``deeponet_depth`` linear layers with tanh between.

    siso: one branch; miso: one branch per component fused by elementwise
    product; mimo: one branch over the concatenated components and a trunk
    emitting one basis per output field.
    """
    b = _Builder(seed)
    width, p, depth = spec.hidden, spec.basis, spec.deeponet_depth
    if depth < 2:
        raise ConfigurationError("DeepONet nets need at least two layers")
    n_heads = 3 if spec.preset == "mimo" else 1
    grid = spec.output_shape[1:] if spec.preset == "mimo" else spec.output_shape
    if coords is None:
        coords = grid_coords(grid)
    coords = np.asarray(coords, dtype=np.float64)
    if spec.preset == "miso":
        branches = [_mlp_names(b, f"branch{i}", int(np.prod(s)), width, p, depth)
                    for i, s in enumerate(spec.input_shapes)]
    else:
        n_in = sum(int(np.prod(s)) for s in spec.input_shapes)
        branches = [_mlp_names(b, "branch0", n_in, width, p, depth)]
    trunk = _mlp_names(b, "trunk", coords.shape[1], width, p * n_heads, depth)
    ps = b.params
    ps.add("beta", Tensor(np.zeros(n_heads)), EXCLUDED)
    return DeepOnetModel(spec, ps, branches, trunk, n_heads, coords)


def branch_embedding(model, inputs):
    spec = model.spec
    if len(inputs) != len(spec.input_shapes):
        raise DimensionError(f"expected {len(spec.input_shapes)} input components, got {len(inputs)}")
    ts = []
    for i, (x, s) in enumerate(zip(inputs, spec.input_shapes)):
        t = _as_batch(x, s, i)
        ts.append(ad.reshape(t, (t.shape[0], int(np.prod(s)))))
    if spec.preset == "miso":
        embs = [_dense(model, names, t, True) for names, t in zip(model.branches, ts)]
        out = embs[0]
        for e in embs[1:]:
            out = ad.binary_ewise(out, e, "mul")
        return out
    x = ts[0] if len(ts) == 1 else ad.concat(ts, axis=1)
    return _dense(model, model.branches[0], x, True)


def forward_deeponet(model, inputs, coords=None):
    """Predictions [batch, heads*Q] (field-major) at ``coords`` [Q, dim]."""
    coords = model.coords if coords is None else np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != model.coords.shape[1]:
        raise DimensionError(f"coords must be [Q, {model.coords.shape[1]}], got {coords.shape}")
    emb = branch_embedding(model, inputs)
    tr = _dense(model, model.trunk, Tensor(coords), True)
    p = model.spec.basis
    outs = []
    beta = model.params["beta"]
    for h in range(model.n_heads):
        th = tr if model.n_heads == 1 else ad.slice_axis(tr, h * p, (h + 1) * p, axis=1)
        pred = ad.matmul(emb, ad.transpose(th))
        bh = beta if model.n_heads == 1 else ad.slice_axis(beta, h, h + 1)
        outs.append(ad.binary_ewise(pred, bh, "add"))
    return outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)


def forward(model, inputs):
    if isinstance(model, DeepOnetModel):
        return forward_deeponet(model, inputs)
    return forward_lnfno(model, inputs)
