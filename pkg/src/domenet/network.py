"""Layer graph, reverse-mode gradients, losses, and checkpoints.

Networks are ordered layer lists. ``forward`` returns the output, the
penultimate embedding (the layer output at ``embedding_index``), and a
cache of per-layer contexts that ``backward`` consumes to produce exact
gradients for every parameter, including the learnable activation
parameters of the DOME family. A version counter invalidates caches
after any parameter update.

The checkpoint container: magic ``DOME1``, a little-endian uint32 JSON
header length, a JSON header describing the architecture and parameter
layout, then the raw little-endian float64 parameter buffers in header
order.
"""

import json
from dataclasses import dataclass

import numpy as np

from .activations import (
    DomeParams,
    MdomeParams,
    PdomeParams,
    dome_backward,
    dome_forward,
    mdome_forward,
    mdome_jacobian,
    pdome_backward,
    pdome_forward,
    simplex_vertices,
)
from .tensor import (
    ShapeError,
    col2im,
    contract,
    contract_tn,
    im2col,
)

__all__ = [
    "Param",
    "StaleCacheError",
    "Dense",
    "Conv2d",
    "MaxPool",
    "Flatten",
    "Activation",
    "DomeActivation",
    "PdomeActivation",
    "MdomeHead",
    "Network",
    "loss",
    "predict_from_output",
    "predict",
    "logit_decompose",
    "build_network",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

CHECKPOINT_MAGIC = b"DOME1"

# Clamp floor applied to mu/sigma after optimizer steps; guards the
# sigma -> 0 singularity.
PARAM_FLOOR = 1e-3


class StaleCacheError(RuntimeError):
    """Backward was called with a cache from before a parameter update."""


@dataclass
class Param:
    """A live reference to one parameter array plus its update policy."""

    key: str
    value: np.ndarray  # updated in place by the optimizer
    decay: bool = True  # participates in weight decay
    clamp_min: float = None  # clamped to this floor after each step


class Dense:
    """Affine layer y = x W (+ b). Glorot-uniform init."""

    def __init__(self, n_in, n_out, bias=True, rng=None):
        rng = rng or np.random.default_rng(0)
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.w = rng.uniform(-limit, limit, size=(n_in, n_out))
        self.b = np.zeros(n_out) if bias else None

    def params(self):
        out = [Param("w", self.w)]
        if self.b is not None:
            out.append(Param("b", self.b))
        return out

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ShapeError(f"dense: input {x.shape} does not match weights {self.w.shape}")
        y = contract(x, self.w)
        if self.b is not None:
            y = y + self.b
        return y, x

    def backward(self, ctx, dy):
        x = ctx
        grads = {"w": contract_tn(x, dy)}
        if self.b is not None:
            grads["b"] = dy.sum(axis=0)
        return contract(dy, self.w.T), grads


class Conv2d:
    """Cross-correlation layer over (batch, c, h, w) inputs."""

    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, bias=True, rng=None):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        fan = (c_in + c_out) * kernel * kernel
        limit = np.sqrt(6.0 / fan)
        self.kernels = rng.uniform(-limit, limit, size=(c_out, c_in, kernel, kernel))
        self.b = np.zeros(c_out) if bias else None

    def params(self):
        out = [Param("kernels", self.kernels)]
        if self.b is not None:
            out.append(Param("b", self.b))
        return out

    def forward(self, x):
        co, ci, kh, kw = self.kernels.shape
        if x.ndim != 4 or x.shape[1] != ci:
            raise ShapeError(f"conv2d: input {x.shape} does not match kernels {self.kernels.shape}")
        cols, oh, ow = im2col(x, kh, kw, self.stride, self.padding)
        out = contract(cols, self.kernels.reshape(co, -1).T)
        y = out.reshape(x.shape[0], oh, ow, co).transpose(0, 3, 1, 2)
        if self.b is not None:
            y = y + self.b[None, :, None, None]
        return np.ascontiguousarray(y), (cols, x.shape)

    def backward(self, ctx, dy):
        cols, x_shape = ctx
        co, ci, kh, kw = self.kernels.shape
        dy_m = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(-1, co)
        gk = np.ascontiguousarray(contract_tn(cols, dy_m).T).reshape(self.kernels.shape)
        grads = {"kernels": gk}
        if self.b is not None:
            grads["b"] = dy_m.sum(axis=0)
        dcols = contract(dy_m, self.kernels.reshape(co, -1))
        dx = col2im(dcols, x_shape, kh, kw, self.stride, self.padding)
        return dx, grads


class MaxPool:
    """Non-overlapping max pooling; ties resolve to the first window slot."""

    def __init__(self, size=2):
        self.size = size

    def params(self):
        return []

    def forward(self, x):
        s = self.size
        b, c, h, w = x.shape
        if h % s or w % s:
            raise ShapeError(f"maxpool: spatial dims {h}x{w} not divisible by {s}")
        oh, ow = h // s, w // s
        windows = x.reshape(b, c, oh, s, ow, s).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, s * s)
        idx = np.argmax(windows, axis=-1)
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, ctx, dy):
        idx, x_shape = ctx
        s = self.size
        b, c, h, w = x_shape
        oh, ow = h // s, w // s
        flat = np.zeros((b, c, oh, ow, s * s))
        np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
        dx = flat.reshape(b, c, oh, ow, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return dx, {}


class Flatten:
    def params(self):
        return []

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, ctx, dy):
        return dy.reshape(ctx), {}


def _softmax(z):
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


class Activation:
    """Parameter-free pointwise activations plus softmax."""

    KINDS = ("relu", "sigmoid", "tanh", "softmax")

    def __init__(self, kind):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind

    def params(self):
        return []

    def forward(self, x):
        if self.kind == "relu":
            return np.maximum(x, 0.0), x
        if self.kind == "sigmoid":
            # clip keeps saturated outputs strictly inside (0, 1) so the
            # bce domain contract survives unregularized logit growth
            y = np.clip(1.0 / (1.0 + np.exp(-x)), 1e-12, 1.0 - 1e-12)
            return y, y
        if self.kind == "tanh":
            y = np.tanh(x)
            return y, y
        y = _softmax(x)
        return y, y

    def backward(self, ctx, dy):
        if self.kind == "relu":
            return dy * (ctx > 0), {}
        if self.kind == "sigmoid":
            return dy * ctx * (1.0 - ctx), {}
        if self.kind == "tanh":
            return dy * (1.0 - ctx * ctx), {}
        y = ctx
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True)), {}


class DomeActivation:
    """Scalar bounded activation with learnable mu/sigma shared across units."""

    def __init__(self, p=None):
        self.p = p or DomeParams()

    def params(self):
        if not self.p.learnable:
            return []
        return [
            Param("mu", self.p.mu, decay=False, clamp_min=PARAM_FLOOR),
            Param("sigma", self.p.sigma, decay=False, clamp_min=PARAM_FLOOR),
        ]

    def forward(self, x):
        return dome_forward(x, self.p), x

    def backward(self, ctx, dy):
        d_x, d_mu, d_sigma = dome_backward(ctx, self.p)
        grads = {}
        if self.p.learnable:
            grads = {"mu": np.sum(dy * d_mu), "sigma": np.sum(dy * d_sigma)}
        return dy * d_x, grads


class PdomeActivation:
    """Hidden-layer two-lobe activation; one (mu, sigma, pi) triple per layer."""

    def __init__(self, p=None):
        self.p = p or PdomeParams()

    def params(self):
        if not self.p.learnable:
            return []
        return [
            Param("mu", self.p.mu, decay=False, clamp_min=PARAM_FLOOR),
            Param("sigma", self.p.sigma, decay=False, clamp_min=PARAM_FLOOR),
            Param("pi", self.p.pi, decay=False, clamp_min=0.0),
        ]

    def forward(self, x):
        return pdome_forward(x, self.p), x

    def backward(self, ctx, dy):
        d_x, d_mu, d_sigma, d_pi = pdome_backward(ctx, self.p)
        grads = {}
        if self.p.learnable:
            grads = {
                "mu": np.sum(dy * d_mu),
                "sigma": np.sum(dy * d_sigma),
                "pi": np.sum(dy * d_pi),
            }
        return dy * d_x, grads


class MdomeHead:
    """Multi-class head mapping (batch, n-1) points to n scores summing to one."""

    def __init__(self, p):
        self.p = p

    @property
    def n(self):
        return self.p.n

    def params(self):
        if not self.p.learnable:
            return []
        return [
            Param("mu", self.p.mu, decay=False, clamp_min=PARAM_FLOOR),
            Param("sigma", self.p.sigma, decay=False, clamp_min=PARAM_FLOOR),
        ]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.p.refs.dim:
            raise ShapeError(f"mdome head expects (batch, {self.p.refs.dim}), got {x.shape}")
        return mdome_forward(x, self.p), x

    def backward(self, ctx, dy):
        jac_x, d_mu, d_sigma = mdome_jacobian(ctx, self.p)
        dx = np.einsum("bn,bnk->bk", dy, jac_x)
        grads = {}
        if self.p.learnable:
            grads = {"mu": np.sum(dy * d_mu), "sigma": np.sum(dy * d_sigma)}
        return dx, grads


class Network:
    """Ordered layers with embedding capture and cache-versioned backward."""

    def __init__(self, layers, embedding_index, loss_kind, meta=None):
        if not 0 <= embedding_index < len(layers) - 1:
            raise ValueError("embedding_index must point before the output layer")
        self.layers = layers
        self.embedding_index = embedding_index
        self.loss_kind = loss_kind
        self.meta = meta or {}
        self.version = 0

    def parameters(self):
        """Flat parameter list; keys are 'layer{i}.{name}'."""
        out = []
        for i, layer in enumerate(self.layers):
            for p in layer.params():
                out.append(Param(f"layer{i}.{p.key}", p.value, p.decay, p.clamp_min))
        return out

    def mark_updated(self):
        """Invalidate caches from earlier forwards; call after any parameter write."""
        self.version += 1

    @property
    def head_index(self):
        """Index of the multi-class DOME head, or None."""
        for i, layer in enumerate(self.layers):
            if isinstance(layer, MdomeHead):
                return i
        return None

    def forward(self, x, stop=None):
        """Run layers [0, stop); returns (output, embedding, cache).

        ``embedding`` is None when the embedding layer is past ``stop``.
        """
        stop = len(self.layers) if stop is None else stop
        x = np.asarray(x, dtype=np.float64)
        ctxs = []
        embedding = None
        for layer in self.layers[:stop]:
            x, ctx = layer.forward(x)
            ctxs.append(ctx)
            if len(ctxs) - 1 == self.embedding_index:
                embedding = x
        cache = {"ctxs": ctxs, "version": self.version}
        return x, embedding, cache

    def backward(self, cache, dout):
        """Reverse-mode pass; returns ({param key: grad}, d_input)."""
        if cache["version"] != self.version:
            raise StaleCacheError("cache predates a parameter update; rerun forward")
        grads = {}
        dx = dout
        for i in reversed(range(len(cache["ctxs"]))):
            dx, layer_grads = self.layers[i].backward(cache["ctxs"][i], dx)
            for name, g in layer_grads.items():
                grads[f"layer{i}.{name}"] = g
        return grads, dx

    def predict(self, x):
        out, _, _ = self.forward(x)
        return predict_from_output(out)


def predict_from_output(out):
    """Class indices from raw outputs: argmax, or >= 0.5 for single-unit outputs."""
    out = np.asarray(out)
    if out.ndim == 1 or out.shape[-1] == 1:
        return (out.reshape(out.shape[0], -1)[:, 0] >= 0.5).astype(int)
    return np.argmax(out, axis=-1)


def _one_hot(labels, n):
    eye = np.zeros((len(labels), n))
    eye[np.arange(len(labels)), labels] = 1.0
    return eye


def loss(kind, output, target):
    """Loss value and gradient with respect to the network output.

    ``target`` is an integer class vector. ``bce`` expects single-unit
    outputs strictly inside (0, 1); ``ce_softmax`` consumes raw logits;
    ``mse`` compares against one-hot targets, averaging over all entries.
    """
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target)
    if kind == "bce":
        o = output.reshape(len(output))
        if np.any(o <= 0.0) or np.any(o >= 1.0):
            raise ValueError("bce requires outputs strictly inside (0, 1)")
        t = target.astype(np.float64)
        value = float(np.mean(-t * np.log(o) - (1.0 - t) * np.log(1.0 - o)))
        grad = ((o - t) / (o * (1.0 - o))) / len(o)
        return value, grad.reshape(output.shape)
    if kind == "ce_softmax":
        p = _softmax(output)
        picked = p[np.arange(len(target)), target]
        value = float(np.mean(-np.log(picked)))
        grad = (p - _one_hot(target, output.shape[-1])) / len(target)
        return value, grad
    if kind == "mse":
        t = target if target.ndim == output.ndim else _one_hot(target, output.shape[-1])
        diff = output - t
        value = float(np.mean(diff * diff))
        return value, 2.0 * diff / diff.size
    raise ValueError(f"unknown loss kind {kind!r}")


def predict(net, x):
    return net.predict(x)


def logit_decompose(x, w):
    """Split a logit into (|x|, |w|, cos theta, z) for embedding diagnostics."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if x.shape != w.shape:
        raise ShapeError(f"logit_decompose: lengths {x.shape} and {w.shape} differ")
    norm_x = float(np.linalg.norm(x))
    norm_w = float(np.linalg.norm(w))
    if norm_x == 0.0 or norm_w == 0.0:
        raise ValueError("logit_decompose: cos theta undefined for a zero vector")
    z = float(x @ w)
    return norm_x, norm_w, z / (norm_x * norm_w), z


HEAD_LOSSES = {"sigmoid": "bce", "dome": "bce", "softmax": "ce_softmax", "mdome": "mse"}


def _hidden(kind):
    if kind == "relu":
        return Activation("relu")
    if kind == "pdome":
        return PdomeActivation(PdomeParams())
    raise ValueError(f"unsupported hidden activation {kind!r}")


def build_network(architecture, head, n_classes, input_shape=None,
                  hidden_activation="relu", seed=0, head_bias=False):
    """Assemble one of the reference architectures with the requested head.

    ``lenet-2d``: classic LeNet-5 sizes down to a linear 2-D embedding.
    ``smallcnn``: two small conv blocks and a 100-d embedding for
    desk-scale robustness runs. ``mlp``: a small dense net with a 2-D
    embedding for point-cloud datasets.

    Heads: ``sigmoid``/``dome`` add a single-logit unit (binary, BCE);
    ``softmax`` emits raw logits for the softmax cross-entropy loss;
    ``mdome`` projects to n-1 dims when needed (bias-free) and applies
    the multi-class head (MSE). The embedding is the layer output just
    before the head.
    """
    if head not in HEAD_LOSSES:
        raise ValueError(f"unknown head {head!r}")
    rng = np.random.default_rng(seed)
    act = lambda: _hidden(hidden_activation)

    if architecture == "lenet-2d":
        input_shape = input_shape or (1, 28, 28)
        layers = [
            Conv2d(input_shape[0], 6, 5, rng=rng), act(), MaxPool(2),
            Conv2d(6, 16, 5, rng=rng), act(), MaxPool(2),
            Flatten(),
            Dense(16 * 4 * 4, 120, rng=rng), act(),
            Dense(120, 84, rng=rng), act(),
            Dense(84, 2, rng=rng),
        ]
        emb_dim = 2
    elif architecture == "smallcnn":
        input_shape = input_shape or (1, 28, 28)
        layers = [
            Conv2d(input_shape[0], 8, 3, padding=1, rng=rng), act(), MaxPool(2),
            Conv2d(8, 16, 3, padding=1, rng=rng), act(), MaxPool(2),
            Flatten(),
            Dense(16 * (input_shape[1] // 4) * (input_shape[2] // 4), 100, rng=rng), act(),
        ]
        emb_dim = 100
    elif architecture == "mlp":
        input_shape = input_shape or (2,)
        layers = [
            Dense(input_shape[0], 32, rng=rng), act(),
            Dense(32, 2, rng=rng),
        ]
        emb_dim = 2
    else:
        raise ValueError(f"unknown architecture {architecture!r}")

    embedding_index = len(layers) - 1

    if head in ("sigmoid", "dome"):
        if n_classes != 2:
            raise ValueError(f"{head} head is binary, got {n_classes} classes")
        layers.append(Dense(emb_dim, 1, bias=head_bias, rng=rng))
        layers.append(Activation("sigmoid") if head == "sigmoid" else DomeActivation())
    elif head == "softmax":
        layers.append(Dense(emb_dim, n_classes, bias=head_bias, rng=rng))
    else:  # mdome
        if emb_dim != n_classes - 1:
            layers.append(Dense(emb_dim, n_classes - 1, bias=False, rng=rng))
        layers.append(MdomeHead(MdomeParams(refs=simplex_vertices(n_classes))))

    meta = {
        "architecture": architecture,
        "head": head,
        "n_classes": n_classes,
        "input_shape": list(input_shape),
        "hidden_activation": hidden_activation,
        "seed": seed,
        "head_bias": head_bias,
    }
    return Network(layers, embedding_index, HEAD_LOSSES[head], meta=meta)


def save_checkpoint(net, path):
    """Write the DOME1 container; requires a builder-made network (meta present)."""
    if not net.meta:
        raise ValueError("checkpointing needs builder metadata; use build_network")
    params = net.parameters()
    header = dict(net.meta)
    header["format_version"] = 1
    header["loss"] = net.loss_kind
    header["embedding_index"] = net.embedding_index
    header["params"] = [{"key": p.key, "shape": list(p.value.shape)} for p in params]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(len(blob)).astype("<u4").tobytes())
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild the network described by a DOME1 file and restore its parameters."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (hlen,) = np.frombuffer(fh.read(4), dtype="<u4")
        header = json.loads(fh.read(int(hlen)).decode())
        net = build_network(
            header["architecture"],
            header["head"],
            header["n_classes"],
            input_shape=tuple(header["input_shape"]),
            hidden_activation=header["hidden_activation"],
            seed=header["seed"],
            head_bias=header["head_bias"],
        )
        params = {p.key: p for p in net.parameters()}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if buf.size != count:
                raise ValueError(f"checkpoint truncated at {entry['key']}")
            params[entry["key"]].value[...] = buf.reshape(shape)
    net.mark_updated()
    return net
