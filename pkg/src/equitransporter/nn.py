"""Equivariant layers with hand-written backward passes, plus Adam and checkpoints.

Every layer maps a ``channels x H x W`` array to another one.  Field types are
tracked as ``(kind, multiplicity)`` pairs with ``kind`` in ``{"trivial",
"regular", "quotient"}``; all regular fields in one network share a group
order ``n``.  ``n = 1`` turns every layer into its ordinary, unconstrained
counterpart.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fields import FormatError, Kernel, correlate, correlate_backward, is_exact, rotate_kernel_operator
from .groups import element

__all__ = [
    "GConv",
    "ReLU",
    "MaxPool2",
    "Upsample2",
    "Save",
    "Merge",
    "GroupPool",
    "QuotientPool",
    "SpatialMean",
    "Network",
    "AdamState",
    "adam_step",
    "softmax_ce",
    "expand_kernel",
    "unet",
    "angle_net",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_to_bytes",
    "checkpoint_from_bytes",
]


class Layer:
    """Base class.  ``forward``/``backward`` take a per-network context dict."""

    kind = "layer"

    def parameters(self) -> dict:
        return {}

    def gradients(self) -> dict:
        return {}

    def zero_grad(self) -> None:
        for g in self.gradients().values():
            g[...] = 0

    def out_type(self, t):
        return t

    def spec(self) -> dict:
        return {"type": self.kind}

    def forward(self, x, ctx):
        raise NotImplementedError

    def backward(self, dy, ctx):
        raise NotImplementedError


@lru_cache(maxsize=64)
def _rotation_stack(r: int, n: int) -> np.ndarray:
    return np.stack([rotate_kernel_operator(r, n, i) for i in range(n)])


@lru_cache(maxsize=64)
def _disk(r: int) -> np.ndarray:
    h = r // 2
    yy, xx = np.mgrid[-h : h + 1, -h : h + 1]
    return (yy**2 + xx**2 <= h * h + 1e-9).astype(np.float64)


class GConv(Layer):
    """Group convolution with filters tied along their C_n orbit.

    ``base`` has shape ``out_mult x in_mult x orbit x r x r`` where ``orbit`` is
    ``n`` for regular inputs and 1 for trivial inputs.
    """

    kind = "gconv"

    def __init__(self, n, in_kind, in_mult, out_kind, out_mult, r=3, rng=None, untied=False,
                 dtype=np.float64):
        if (in_kind, out_kind) not in (("trivial", "regular"), ("regular", "regular"),
                                       ("trivial", "trivial")):
            raise ValueError(f"unsupported gconv type pair {in_kind} -> {out_kind}")
        if r % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.n, self.r = n, r
        self.in_kind, self.in_mult = in_kind, in_mult
        self.out_kind, self.out_mult = out_kind, out_mult
        self.orbit = n if in_kind == "regular" else 1
        self.untied = untied
        in_ch = in_mult * (n if in_kind == "regular" else 1)
        # ReLU gain: keeps activation variance roughly constant with depth
        bound = np.sqrt(6.0 / (in_ch * r * r))
        rng = np.random.default_rng(0) if rng is None else rng
        self.base = rng.uniform(-bound, bound, (out_mult, in_mult, self.orbit, r, r)).astype(dtype)
        self.bias = np.zeros(out_mult, dtype=dtype)
        self.dbase = np.zeros_like(self.base)
        self.dbias = np.zeros_like(self.bias)
        exact = all(is_exact(element(n, i)) for i in range(n))
        self.mask = np.ones((r, r)) if exact else _disk(r)
        self.noise = None
        if untied:
            # debug mutation: independent perturbation of every orbit copy
            shape = self._full_shape()
            self.noise = np.random.default_rng(12345).uniform(-bound, bound, shape).astype(dtype)

    # -- type plumbing -----------------------------------------------------
    def _full_shape(self):
        o = self.out_mult * (self.n if self.out_kind == "regular" else 1)
        i = self.in_mult * (self.n if self.in_kind == "regular" else 1)
        return (o, i, self.r, self.r)

    def out_type(self, t):
        if t != (self.in_kind, self.in_mult):
            raise ValueError(f"gconv expects {(self.in_kind, self.in_mult)}, got {t}")
        return (self.out_kind, self.out_mult)

    def spec(self):
        return {"type": self.kind, "n": self.n, "r": self.r, "in_kind": self.in_kind,
                "in_mult": self.in_mult, "out_kind": self.out_kind, "out_mult": self.out_mult,
                "untied": self.untied}

    def parameters(self):
        return {"base": self.base, "bias": self.bias}

    def gradients(self):
        return {"base": self.dbase, "bias": self.dbias}

    # -- kernel expansion --------------------------------------------------
    def expand(self) -> np.ndarray:
        n, r = self.n, self.r
        rot = _rotation_stack(r, n).astype(self.base.dtype, copy=False)
        b = (self.base * self.mask.astype(self.base.dtype)).reshape(self.out_mult, self.in_mult, self.orbit, r * r)
        if self.in_kind == "trivial" and self.out_kind == "regular":
            k = np.einsum("ipq,ocq->oicp", rot, b[:, :, 0])
        elif self.in_kind == "regular":
            idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n  # [i, j] = j - i
            k = np.einsum("ipq,ocijq->oicjp", rot, b[:, :, idx])
        else:
            k = np.einsum("ipq,ocq->ocp", rot, b[:, :, 0]) / n
        k = k.reshape(self._full_shape())
        if self.noise is not None:
            k = k + self.noise
        return k

    def _expand_adjoint(self, dk: np.ndarray) -> np.ndarray:
        n, r = self.n, self.r
        rot = _rotation_stack(r, n).astype(dk.dtype, copy=False)
        o, c = self.out_mult, self.in_mult
        db = np.zeros((o, c, self.orbit, r * r), dtype=dk.dtype)
        if self.in_kind == "trivial" and self.out_kind == "regular":
            db[:, :, 0] = np.einsum("ipq,oicp->ocq", rot, dk.reshape(o, n, c, r * r))
        elif self.in_kind == "regular":
            t = np.einsum("ipq,oicjp->ocijq", rot, dk.reshape(o, n, c, n, r * r))
            for i in range(n):
                db += np.roll(t[:, :, i], -i, axis=2)
        else:
            db[:, :, 0] = np.einsum("ipq,ocp->ocq", rot, dk.reshape(o, c, r * r)) / n
        return db.reshape(self.base.shape) * self.mask.astype(dk.dtype)

    def _full_bias(self):
        return np.repeat(self.bias, self.n) if self.out_kind == "regular" else self.bias

    def forward(self, x, ctx):
        k = self.expand()
        ctx[id(self)] = (x, k)
        return correlate(x, k, self.r // 2) + self._full_bias()[:, None, None]

    def backward(self, dy, ctx):
        x, k = ctx.pop(id(self))
        dx, dk = correlate_backward(x, k, dy, self.r // 2)
        self.dbase += self._expand_adjoint(dk)
        db = dy.sum(axis=(1, 2))
        if self.out_kind == "regular":
            db = db.reshape(self.out_mult, self.n).sum(axis=1)
        self.dbias += db
        return dx


def expand_kernel(layer: GConv) -> Kernel:
    return Kernel(layer.expand())


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, ctx):
        ctx[id(self)] = x > 0
        return np.where(x > 0, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy, ctx):
        return dy * ctx.pop(id(self))


class MaxPool2(Layer):
    """Halve the grid.  Even sizes use 2x2 blocks; odd sizes use 3x3 windows
    centered on even pixels (stride 2), which keeps the grid center fixed."""

    kind = "maxpool2"

    def forward(self, x, ctx):
        c, h, w = x.shape
        if h % 2:
            xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
            win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::2, ::2]
            size = 3
        else:
            win = sliding_window_view(x, (2, 2), axis=(1, 2))[:, ::2, ::2]
            size = 2
        ho, wo = win.shape[1:3]
        flat = win.reshape(c, ho, wo, size * size)
        arg = flat.argmax(axis=-1)
        ctx[id(self)] = (x.shape, arg, size)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy, ctx):
        shape, arg, size = ctx.pop(id(self))
        c, h, w = shape
        off = 1 if size == 3 else 0
        ho, wo = arg.shape[1:]
        rows = 2 * np.arange(ho)[None, :, None] + arg // size - off
        cols = 2 * np.arange(wo)[None, None, :] + arg % size - off
        chan = np.broadcast_to(np.arange(c)[:, None, None], arg.shape)
        dx = np.zeros(shape, dtype=dy.dtype)
        np.add.at(dx, (chan, rows, cols), dy)
        return dx


@lru_cache(maxsize=64)
def _upsample_matrix(h: int, odd: bool) -> np.ndarray:
    if odd:
        # h -> 2h - 1, linear interpolation with aligned end points
        u = np.zeros((2 * h - 1, h))
        for k in range(h):
            u[2 * k, k] = 1.0
            if k + 1 < h:
                u[2 * k + 1, k] = u[2 * k + 1, k + 1] = 0.5
        return u
    # h -> 2h, each pixel copied into a 2x2 block
    u = np.zeros((2 * h, h))
    for k in range(h):
        u[2 * k, k] = u[2 * k + 1, k] = 1.0
    return u


class Upsample2(Layer):
    """Inverse of :class:`MaxPool2` in grid size: block copy on even grids, linear on odd ones."""

    kind = "upsample2"

    def __init__(self, odd=False):
        self.odd = bool(odd)

    def spec(self):
        return {"type": self.kind, "odd": self.odd}

    def forward(self, x, ctx):
        c, h, w = x.shape
        ctx[id(self)] = _upsample_matrix(h, self.odd).astype(x.dtype)
        if not self.odd:
            return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
        y = np.empty((c, 2 * h - 1, 2 * w - 1), dtype=x.dtype)
        y[:, ::2, ::2] = x
        y[:, 1::2, ::2] = 0.5 * (x[:, :-1] + x[:, 1:])
        y[:, ::2, 1::2] = 0.5 * (x[:, :, :-1] + x[:, :, 1:])
        # diagonal pairs first, so the sum order is the same after any quarter turn
        y[:, 1::2, 1::2] = 0.25 * ((x[:, :-1, :-1] + x[:, 1:, 1:]) + (x[:, :-1, 1:] + x[:, 1:, :-1]))
        return y

    def backward(self, dy, ctx):
        u = ctx.pop(id(self))
        return np.einsum("ij,cil,lk->cjk", u, dy, u, optimize=True)


class Save(Layer):
    kind = "save"

    def __init__(self, name):
        self.name = name

    def spec(self):
        return {"type": self.kind, "name": self.name}

    def out_type(self, t):
        self._type = t
        return t

    def forward(self, x, ctx):
        ctx[("skip", self.name)] = x
        return x

    def backward(self, dy, ctx):
        return dy + ctx.pop(("skip-grad", self.name))


class Merge(Layer):
    """Additive skip connection from the matching :class:`Save`."""

    kind = "merge"

    def __init__(self, name):
        self.name = name

    def spec(self):
        return {"type": self.kind, "name": self.name}

    def forward(self, x, ctx):
        skip = ctx.pop(("skip", self.name))
        if skip.shape != x.shape:
            raise ValueError(f"skip {self.name!r} has shape {skip.shape}, merge input {x.shape}")
        return x + skip

    def backward(self, dy, ctx):
        ctx[("skip-grad", self.name)] = dy
        return dy


class GroupPool(Layer):
    """Regular -> trivial by averaging each orbit of ``n`` channels."""

    kind = "grouppool"

    def __init__(self, n):
        self.n = n

    def spec(self):
        return {"type": self.kind, "n": self.n}

    def out_type(self, t):
        if t[0] != "regular":
            raise ValueError(f"group pooling needs a regular field, got {t}")
        return ("trivial", t[1])

    def forward(self, x, ctx):
        c, h, w = x.shape
        return x.reshape(c // self.n, self.n, h, w).mean(axis=1)

    def backward(self, dy, ctx):
        return np.repeat(dy / self.n, self.n, axis=0)


class QuotientPool(Layer):
    """Regular C_n -> quotient C_n/C_k by averaging over C_k cosets."""

    kind = "quotientpool"

    def __init__(self, n, k=2):
        if n % k:
            raise ValueError(f"{k} does not divide {n}")
        self.n, self.k = n, k

    def spec(self):
        return {"type": self.kind, "n": self.n, "k": self.k}

    def out_type(self, t):
        if t[0] != "regular":
            raise ValueError(f"quotient pooling needs a regular field, got {t}")
        return ("quotient", t[1])

    def forward(self, x, ctx):
        c, h, w = x.shape
        m = c // self.n
        return x.reshape(m, self.k, self.n // self.k, h, w).mean(axis=1).reshape(-1, h, w)

    def backward(self, dy, ctx):
        c, h, w = dy.shape
        d = self.n // self.k
        g = dy.reshape(c // d, 1, d, h, w) / self.k
        return np.broadcast_to(g, (c // d, self.k, d, h, w)).reshape(-1, h, w).copy()


class SpatialMean(Layer):
    kind = "spatialmean"

    def forward(self, x, ctx):
        ctx[id(self)] = x.shape
        return x.mean(axis=(1, 2), keepdims=True)

    def backward(self, dy, ctx):
        c, h, w = ctx.pop(id(self))
        return np.broadcast_to(dy / (h * w), (c, h, w)).copy()


_LAYERS = {cls.kind: cls for cls in (GConv, ReLU, MaxPool2, Upsample2, Save, Merge, GroupPool,
                                     QuotientPool, SpatialMean)}


class Network:
    """An ordered list of layers with a typed input and output."""

    def __init__(self, layers, in_type, name="net"):
        self.layers = list(layers)
        self.in_type = tuple(in_type)
        self.name = name
        t = self.in_type
        saved = {}
        for layer in self.layers:
            if isinstance(layer, Merge):
                if saved.get(layer.name) != t:
                    raise ValueError(f"merge {layer.name!r}: type {t} != saved {saved.get(layer.name)}")
            t = layer.out_type(t)
            if isinstance(layer, Save):
                saved[layer.name] = t
        self.out_type = t
        self._ctx = None

    @property
    def n(self) -> int:
        for layer in self.layers:
            if isinstance(layer, GConv):
                return layer.n
        return 1

    def in_channels(self) -> int:
        kind, mult = self.in_type
        return mult * (self.n if kind == "regular" else 1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[0] != self.in_channels():
            raise ValueError(f"{self.name}: expected {self.in_channels()} input channels, got shape {x.shape}")
        ctx = {}
        for layer in self.layers:
            x = layer.forward(x, ctx)
        self._ctx = ctx
        return x

    __call__ = forward

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._ctx is None:
            raise RuntimeError(f"{self.name}: backward called without a cached forward pass")
        ctx, self._ctx = self._ctx, None
        for layer in reversed(self.layers):
            dy = layer.backward(dy, ctx)
        return dy

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for k, v in layer.parameters().items():
                out.append((f"{i}.{k}", v))
        return out

    def parameters(self):
        return [v for _, v in self.named_parameters()]

    def gradients(self):
        return [g for layer in self.layers for g in layer.gradients().values()]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def gconvs(self):
        return [layer for layer in self.layers if isinstance(layer, GConv)]

    def spec(self) -> dict:
        return {"name": self.name, "in_type": list(self.in_type),
                "layers": [layer.spec() for layer in self.layers]}

    @classmethod
    def from_spec(cls, spec: dict, dtype=np.float32) -> "Network":
        layers = []
        for s in spec["layers"]:
            s = dict(s)
            kind = s.pop("type")
            if kind == "gconv":
                layers.append(GConv(dtype=dtype, **s))
            else:
                layers.append(_LAYERS[kind](**s))
        return cls(layers, spec["in_type"], spec["name"])

    def astype(self, dtype) -> "Network":
        for layer in self.gconvs():
            layer.base = layer.base.astype(dtype)
            layer.bias = layer.bias.astype(dtype)
            layer.dbase = np.zeros_like(layer.base)
            layer.dbias = np.zeros_like(layer.bias)
            if layer.noise is not None:
                layer.noise = layer.noise.astype(dtype)
        return self

    def load_parameters(self, arrays) -> None:
        for dst, src in zip(self.parameters(), arrays, strict=True):
            if dst.shape != src.shape:
                raise ValueError(f"parameter shape {src.shape} != {dst.shape}")
            dst[...] = src


# ----------------------------------------------------------------------------
# builders


def unet(n, in_channels, widths=(8, 16, 32), odd=False, r=3, rng=None, untied=False,
         dtype=np.float64, name="unet"):
    """Two-level U-Net, trivial input -> one trivial output channel.

    ``widths`` count channels; each level holds ``width // n`` regular fields.
    """
    m1, m2, m3 = (max(w // n, 1) for w in widths)
    kw = dict(r=r, rng=rng, untied=untied, dtype=dtype)
    layers = [
        GConv(n, "trivial", in_channels, "regular", m1, **kw), ReLU(),
        GConv(n, "regular", m1, "regular", m1, **kw), ReLU(), Save("s0"),
        MaxPool2(),
        GConv(n, "regular", m1, "regular", m2, **kw), ReLU(), Save("s1"),
        MaxPool2(),
        GConv(n, "regular", m2, "regular", m3, **kw), ReLU(),
        Upsample2(odd),
        GConv(n, "regular", m3, "regular", m2, **kw), ReLU(), Merge("s1"),
        Upsample2(odd),
        GConv(n, "regular", m2, "regular", m1, **kw), ReLU(), Merge("s0"),
        GConv(n, "regular", m1, "regular", 1, **kw),
        GroupPool(n),
    ]
    return Network(layers, ("trivial", in_channels), name)


def angle_net(n, in_channels, widths=(8, 16), r=3, rng=None, untied=False, dtype=np.float64,
              name="angle"):
    """Crop -> ``n/2`` logits over gripper angles in [0, pi) (quotient C_n/C_2)."""
    m1, m2 = (max(w // n, 1) for w in widths)
    kw = dict(r=r, rng=rng, untied=untied, dtype=dtype)
    layers = [
        GConv(n, "trivial", in_channels, "regular", m1, **kw), ReLU(),
        GConv(n, "regular", m1, "regular", m1, **kw), ReLU(),
        MaxPool2(),
        GConv(n, "regular", m1, "regular", m2, **kw), ReLU(),
        MaxPool2(),
        GConv(n, "regular", m2, "regular", m2, **kw), ReLU(),
        GConv(n, "regular", m2, "regular", 1, **kw),
        SpatialMean(),
        QuotientPool(n, 2),
    ]
    return Network(layers, ("trivial", in_channels), name)


# ----------------------------------------------------------------------------
# loss and optimizer


def softmax_ce(logits: np.ndarray, index) -> tuple[float, np.ndarray]:
    """Cross-entropy of a softmax over *all* entries of ``logits``.

    ``index`` is a flat index or a coordinate tuple.  Returns ``(loss, dlogits)``.
    """
    z = np.asarray(logits)
    flat_idx = int(np.ravel_multi_index(index, z.shape)) if isinstance(index, tuple) else int(index)
    flat = z.ravel().astype(np.float64)
    shifted = flat - flat.max()
    logsum = np.log(np.exp(shifted).sum())
    loss = float(logsum - shifted[flat_idx])
    p = np.exp(shifted - logsum)
    p[flat_idx] -= 1.0
    return loss, p.reshape(z.shape).astype(z.dtype)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def scalars(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "step": self.step}


def adam_step(state: AdamState, params, grads) -> AdamState:
    """Bias-corrected Adam update, in place on ``params``."""
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr / bc1 * m / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype, copy=False)
    return state


# ----------------------------------------------------------------------------
# ETPC checkpoint

_CKPT_MAGIC = b"ETPC"


def checkpoint_to_bytes(networks: dict, adam: dict | None = None, extra: dict | None = None) -> bytes:
    adam = adam or {}
    arrays, index = [], []
    for name, net in networks.items():
        for pname, p in net.named_parameters():
            arrays.append(p)
            index.append([f"{name}/{pname}", list(p.shape)])
        st = adam.get(name)
        if st is not None and st.m:
            for tag, moments in (("m", st.m), ("v", st.v)):
                for (pname, _), mom in zip(net.named_parameters(), moments):
                    arrays.append(mom)
                    index.append([f"{name}/adam.{tag}/{pname}", list(mom.shape)])
    header = {
        "networks": {name: net.spec() for name, net in networks.items()},
        "adam": {name: st.scalars() for name, st in adam.items()},
        "arrays": index,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    return _CKPT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + body


def checkpoint_from_bytes(buf: bytes):
    """Inverse of :func:`checkpoint_to_bytes`: ``(networks, adam_states, extra)``."""
    if buf[:4] != _CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    if len(buf) < 8:
        raise FormatError("truncated checkpoint")
    (hlen,) = struct.unpack("<I", buf[4:8])
    try:
        header = json.loads(buf[8 : 8 + hlen])
    except ValueError as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from exc
    try:
        return _checkpoint_body(header, buf[8 + hlen :])
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"inconsistent checkpoint header: {exc!r}") from exc


def _checkpoint_body(header, body: bytes):
    stream = io.BytesIO(body)
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        raw = stream.read(4 * count)
        if len(raw) != 4 * count:
            raise FormatError("truncated checkpoint body")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if stream.read(1):
        raise FormatError("trailing bytes in checkpoint")
    networks, adam = {}, {}
    # declaration order is the body order; the JSON header itself is key-sorted
    order = list(dict.fromkeys(a.split("/", 1)[0] for a, _ in header["arrays"]))
    order += sorted(set(header["networks"]) - set(order))
    for name in order:
        spec = header["networks"][name]
        net = Network.from_spec(spec, dtype=np.float32)
        net.load_parameters([arrays[f"{name}/{p}"] for p, _ in net.named_parameters()])
        networks[name] = net
        if name in header["adam"]:
            st = AdamState(**header["adam"][name])
            keys = [p for p, _ in net.named_parameters()]
            if f"{name}/adam.m/{keys[0]}" in arrays:
                st.m = [arrays[f"{name}/adam.m/{p}"].copy() for p in keys]
                st.v = [arrays[f"{name}/adam.v/{p}"].copy() for p in keys]
            adam[name] = st
    return networks, adam, header["extra"]


def save_checkpoint(path, networks, adam=None, extra=None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(networks, adam, extra))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
