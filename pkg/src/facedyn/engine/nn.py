"""Module system: parameter registration, named state, layer classes."""

from __future__ import annotations

import math

import numpy as np

from facedyn.engine import functional as F
from facedyn.engine.rng import stream
from facedyn.engine.tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor with an initialization recipe.

    The dotted name path is assigned when the owning model walks its
    tree (named_parameters / initialize) and round-trips through
    checkpoints.
    """

    def __init__(self, shape, init="zeros", fan_in=None, dtype=np.float32):
        super().__init__(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.init_spec = (init, fan_in)
        self.name = None

    def fill(self, gen):
        kind, fan_in = self.init_spec
        if kind == "zeros":
            self.data[...] = 0.0
        elif kind == "ones":
            self.data[...] = 1.0
        elif kind == "fan_in_uniform":
            bound = 1.0 / math.sqrt(fan_in)
            self.data[...] = gen.uniform(-bound, bound, self.data.shape).astype(self.data.dtype)
        else:
            raise ValueError(f"unknown init spec {kind!r}")


class Module:
    """Base class with recursive parameter/buffer/child tracking."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    # -- traversal -------------------------------------------------------------

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}{name}.")

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield f"{prefix}{name}", b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def train(self, mode=True):
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    # -- init and state ----------------------------------------------------------

    def initialize(self, seed):
        """Fill every parameter and seed every dropout site from (seed, name).

        Init is a pure function of the name path, so two models built
        from the same config and seed hold bit-identical parameters no
        matter the construction order.
        """
        names = set()
        for name, p in self.named_parameters():
            if name in names:
                raise ValueError(f"duplicate parameter name {name!r}")
            names.add(name)
            p.name = name
            p.fill(stream(seed, f"init/{name}"))
        for name, m in self.named_modules():
            if isinstance(m, Dropout):
                m.gen = stream(seed, f"dropout/{name}")
            if hasattr(m, "reset_buffers"):
                m.reset_buffers()
        return self

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state):
        seen = set()
        for name, p in self.named_parameters():
            if name not in state:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            if state[name].shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: model {p.data.shape}, checkpoint {state[name].shape}"
                )
            p.data[...] = state[name]
            p.name = name
            seen.add(name)
        for name, b in self.named_buffers():
            if name not in state:
                raise ValueError(f"checkpoint missing buffer {name!r}")
            b[...] = state[name]
            seen.add(name)
        extra = set(state) - seen
        if extra:
            raise ValueError(f"checkpoint holds unknown entries: {sorted(extra)}")
        return self


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self._children[str(len(self._list))] = module
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Linear(Module):
    def __init__(self, d_in, d_out, bias=True):
        super().__init__()
        self.weight = Parameter((d_out, d_in), init="fan_in_uniform", fan_in=d_in)
        self.bias = Parameter((d_out,), init="fan_in_uniform", fan_in=d_in) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv3d(Module):
    def __init__(self, c_in, c_out, kernel=(3, 3, 3), stride=(1, 1, 1), padding=(0, 0, 0)):
        super().__init__()
        kt, kh, kw = kernel
        fan_in = c_in * kt * kh * kw
        self.weight = Parameter((c_out, c_in, kt, kh, kw), init="fan_in_uniform", fan_in=fan_in)
        self.bias = Parameter((c_out,), init="fan_in_uniform", fan_in=fan_in)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=0):
        super().__init__()
        fan_in = c_in * kernel
        self.weight = Parameter((c_out, c_in, kernel), init="fan_in_uniform", fan_in=fan_in)
        self.bias = Parameter((c_out,), init="fan_in_uniform", fan_in=fan_in)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm3d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter((channels,), init="ones")
        self.beta = Parameter((channels,), init="zeros")
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def reset_buffers(self):
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0

    def forward(self, x):
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Dropout(Module):
    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout: p must be in [0, 1), got {p}")
        self.p = p
        self.gen = None  # assigned by Module.initialize

    def forward(self, x):
        if self.training and self.p > 0.0 and self.gen is None:
            raise RuntimeError("dropout used in train mode before initialize(seed)")
        return F.dropout(x, self.p, self.training, self.gen)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over [B, L, d_model] sequences."""

    def __init__(self, d_model, heads):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.q_proj = Linear(d_model, d_model)
        self.k_proj = Linear(d_model, d_model)
        self.v_proj = Linear(d_model, d_model)
        self.out_proj = Linear(d_model, d_model)

    def forward(self, x, return_weights=False):
        B, L, D = x.shape
        if D != self.d_model:
            raise ValueError(f"attention: trailing dimension mismatch: got {D}, expected {self.d_model}")

        def split(t):
            return t.reshape(B, L, self.heads, self.d_head).transpose(0, 2, 1, 3)

        q = split(self.q_proj.forward(x))
        k = split(self.k_proj.forward(x))
        v = split(self.v_proj.forward(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) / math.sqrt(self.d_head)
        weights = F.softmax(scores, axis=-1)  # [B, heads, L, L]
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(B, L, D)
        out = self.out_proj.forward(ctx)
        if return_weights:
            return out, weights.data
        return out
