"""Layer specs, the Network container, forward/backward and probe hooks."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from ..rng import RandomStream
from . import layers as L

ARCHITECTURES = ("logreg", "mlp_1000", "cnn_mnist", "cnn_cifar")

# lambda_l defaults for microstimulation by stage name
DEFAULT_STIM_LAMBDA = {"fc": 0.01, "conv1": 0.1, "conv2": 1.0}


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv2d | maxpool2 | dense | activation
    name: str = ""
    out: int = 0  # out_maps for conv2d, out_units for dense
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: str = "valid"
    fn: str = ""

    def __post_init__(self):
        if self.kind not in ("conv2d", "maxpool2", "dense", "activation"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            kh, kw = self.kernel
            if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
                raise ConfigError("conv kernel dims must be odd and >= 1")
            if self.stride != 1:
                raise ConfigError("only stride 1 convolutions are supported")
            if self.padding not in ("valid", "same"):
                raise ConfigError(f"bad padding {self.padding!r}")
        if self.kind == "activation" and self.fn not in ("relu", "tanh", "softmax"):
            raise ConfigError(f"bad activation {self.fn!r}")


def conv(name, out, k, padding="valid"):
    return LayerSpec("conv2d", name, out, (k, k), 1, padding)


def dense(name, out):
    return LayerSpec("dense", name, out)


def act(fn):
    return LayerSpec("activation", fn=fn)


def pool(name):
    return LayerSpec("maxpool2", name)


@dataclass
class StimulationConfig:
    """Activity-proportional bias modulation of one stage.

    ``mode="per_stimulus"`` derives the activation term from each
    stimulus' own unstimulated pass; ``mode="batch"`` averages it over the
    whole batch and applies one shared offset per map.
    """

    layer_name: str
    k: float
    lam: float | None = None
    mode: str = "per_stimulus"

    def resolved_lambda(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        return DEFAULT_STIM_LAMBDA.get(self.layer_name, 0.1)


@dataclass
class InjectionConfig:
    layer_name: str
    injected: np.ndarray  # NCHW (or N x units), or one sample broadcast over N
    gamma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("injection gamma must lie in [0, 1]")


@dataclass
class Network:
    architecture_id: str
    specs: list[LayerSpec]
    input_shape: tuple[int, int, int]
    num_classes: int
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    map_bias: dict[str, np.ndarray] = field(default_factory=dict)  # conv stages
    dense_bias: dict[str, np.ndarray] = field(default_factory=dict)  # dense stages

    # ------------------------------------------------------------------ basics
    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def bias(self, name: str) -> np.ndarray:
        return self.map_bias[name] if name in self.map_bias else self.dense_bias[name]

    def stage_names(self) -> list[str]:
        return [s.name for s in self.specs if s.kind in ("conv2d", "dense", "maxpool2")]

    def param_count(self) -> int:
        return sum(int(w.size) for w in self.weights.values()) + sum(
            int(b.size) for b in list(self.map_bias.values()) + list(self.dense_bias.values())
        )

    def astype(self, dtype) -> "Network":
        net = self.copy()
        for d in (net.weights, net.map_bias, net.dense_bias):
            for k in d:
                d[k] = d[k].astype(dtype)
        return net

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat view ``{"conv1.weight": ..., "conv1.bias": ...}`` (shared arrays)."""
        out = {}
        for s in self.specs:
            if s.kind in ("conv2d", "dense"):
                out[f"{s.name}.weight"] = self.weights[s.name]
                out[f"{s.name}.bias"] = self.bias(s.name)
        return out

    def _activation_after(self, idx: int) -> str:
        if idx + 1 < len(self.specs) and self.specs[idx + 1].kind == "activation":
            return self.specs[idx + 1].fn
        return "identity"

    # ---------------------------------------------------------------- forward
    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if tuple(x.shape[1:]) != tuple(self.input_shape):
            raise ShapeError(f"batch shape {x.shape[1:]} does not match input {self.input_shape}")
        return x.astype(self.dtype, copy=False)

    def _run(self, x_nchw, *, bias_delta=None, inject=None, capture=(), until=None,
             keep_cache=False):
        """Core pass. Returns (output, captured NCHW stage outputs, caches)."""
        captured = {}
        caches = []
        x = x_nchw.transpose(0, 2, 3, 1)  # NHWC
        if inject is not None and inject.layer_name == "input":
            x = self._blend(x, inject)
        if "input" in capture:
            captured["input"] = x_nchw
        i = 0
        specs = self.specs
        while i < len(specs):
            s = specs[i]
            if s.kind in ("conv2d", "dense"):
                fn = self._activation_after(i)
                w = self.weights[s.name]
                b = self.bias(s.name)
                if s.kind == "conv2d":
                    z, cache = L.conv_forward(x, w, b, s.padding)
                    if bias_delta is not None and s.name in bias_delta:
                        z = z + bias_delta[s.name][:, None, None, :]
                else:
                    nhwc_shape = x.shape
                    flat = x.transpose(0, 3, 1, 2).reshape(x.shape[0], -1) if x.ndim == 4 else x
                    z = flat @ w.T + b
                    if bias_delta is not None and s.name in bias_delta:
                        z = z + bias_delta[s.name]
                    cache = (flat, nhwc_shape)
                a = L.activation_forward(fn, z)
                if inject is not None and inject.layer_name == s.name:
                    a = self._blend(a, inject)
                if keep_cache:
                    caches.append((i, s, fn, cache, z, a))
                x = a
                i += 2 if fn != "identity" else 1
            elif s.kind == "maxpool2":
                x, cache = L.maxpool_forward(x, need_arg=keep_cache)
                if inject is not None and inject.layer_name == s.name:
                    x = self._blend(x, inject)
                if keep_cache:
                    caches.append((i, s, None, cache, None, None))
                i += 1
            else:
                raise ConfigError(f"activation {s.fn!r} without a preceding weight layer")
            if s.name in capture:
                captured[s.name] = _to_nchw(x)
            if until is not None and s.name == until:
                break
        return x, captured, caches

    def _blend(self, a_nhwc, inject: InjectionConfig):
        inj = np.asarray(inject.injected, dtype=a_nhwc.dtype)
        if a_nhwc.ndim == 4:
            inj = inj.transpose(0, 2, 3, 1) if inj.ndim == 4 else inj.transpose(1, 2, 0)
        target = a_nhwc.shape[1:]
        if inj.shape[-len(target):] != target:
            raise ShapeError(f"injected activation shape {inj.shape} does not match {a_nhwc.shape}")
        g = inject.gamma
        return g * a_nhwc + (1.0 - g) * inj

    def forward(self, batch, trace: bool = False, stim: StimulationConfig | None = None,
                inject: InjectionConfig | None = None, bias_offset: dict | None = None):
        """Logits for a batch, optionally with a per-stage trace.

        With ``stim`` the target stage is first evaluated without
        modulation; the resulting activations set a per-map bias offset and
        the batch is run again. With ``inject`` the target stage's output is
        replaced by ``gamma * genuine + (1 - gamma) * injected``.
        ``bias_offset`` maps layer names to precomputed per-map offsets,
        shape (M,) or (N, M), and cannot be combined with ``stim``.
        """
        x = self._check_batch(batch)
        names = self.stage_names()
        for cfg in (stim, inject):
            if cfg is not None and cfg.layer_name not in names + ["input"]:
                raise ConfigError(f"no layer named {cfg.layer_name!r}")
        if stim is not None and inject is not None and stim.layer_name == inject.layer_name:
            raise ConfigError("stimulation and injection target the same layer")
        delta = None
        if bias_offset is not None:
            if stim is not None:
                raise ConfigError("bias_offset and stim are mutually exclusive")
            delta = {}
            for name, off in bias_offset.items():
                if name not in self.map_bias and name not in self.dense_bias:
                    raise ConfigError(f"layer {name!r} has no bias to offset")
                off = np.asarray(off, dtype=x.dtype)
                delta[name] = np.broadcast_to(off, (len(x), self.bias(name).size))
        if stim is not None:
            if stim.layer_name not in self.map_bias and stim.layer_name not in self.dense_bias:
                raise ConfigError(f"layer {stim.layer_name!r} has no bias to stimulate")
            _, cap, _ = self._run(x, capture=(stim.layer_name,), until=stim.layer_name,
                                  inject=inject)
            delta = {stim.layer_name: stimulation_delta(cap[stim.layer_name], stim).astype(x.dtype)}
        capture = tuple(names) if trace else ()
        out, captured, _ = self._run(x, bias_delta=delta, inject=inject, capture=capture)
        if trace:
            captured["_stim_delta"] = None if stim is None else delta[stim.layer_name]
            return out, captured
        return out, None

    def activations(self, batch, layer: str, stim=None, inject=None) -> np.ndarray:
        """Output of one stage (NCHW or N x units), stopping the pass there."""
        x = self._check_batch(batch)
        if layer not in self.stage_names() + ["input"]:
            raise ConfigError(f"no layer named {layer!r}")
        if layer == "input":
            return x
        if stim is not None or inject is not None:
            _, cap = self.forward(x, trace=True, stim=stim, inject=inject)
            return cap[layer]
        _, cap, _ = self._run(x, capture=(layer,), until=layer)
        return cap[layer]

    def logits(self, batch) -> np.ndarray:
        return self.forward(batch)[0]

    def predict(self, batch, batch_size: int = 512, **kw) -> np.ndarray:
        x = np.asarray(batch)
        out = np.empty(len(x), dtype=np.int64)
        for s in range(0, len(x), batch_size):
            out[s:s + batch_size] = self.forward(x[s:s + batch_size], **kw)[0].argmax(axis=1)
        return out

    def predict_proba(self, batch) -> np.ndarray:
        return L.softmax(self.forward(batch)[0].astype(np.float64))

    # --------------------------------------------------------------- backward
    def loss_and_grads(self, batch, labels, need_input_grad: bool = False):
        """Mean cross-entropy, parameter gradients and optionally dL/dx (NCHW)."""
        return self.backprop(batch, labels, need_input_grad)[:3]

    def backprop(self, batch, labels, need_input_grad: bool = False):
        x = self._check_batch(batch)
        logits, _, caches = self._run(x, keep_cache=True)
        loss, d = L.cross_entropy(logits, np.asarray(labels))
        grads = {}
        for pos in range(len(caches) - 1, -1, -1):
            i, s, fn, cache, z, a = caches[pos]
            first = pos == 0
            need_dx = need_input_grad or not first
            if s.kind == "maxpool2":
                d = L.maxpool_backward(d, cache)
                continue
            d = L.activation_backward(fn, d, z, a)
            if s.kind == "conv2d":
                dx, dw, db = L.conv_backward(d, self.weights[s.name], cache, s.padding, need_dx)
            else:
                flat, nhwc_shape = cache
                dw = d.T @ flat
                db = d.sum(axis=0)
                dx = None
                if need_dx:
                    dx = d @ self.weights[s.name]
                    if len(nhwc_shape) == 4:
                        n, h, w, c = nhwc_shape
                        dx = dx.reshape(n, c, h, w).transpose(0, 2, 3, 1)
            grads[f"{s.name}.weight"] = dw
            grads[f"{s.name}.bias"] = db
            d = dx
        dinput = d.transpose(0, 3, 1, 2) if need_input_grad else None
        return loss, grads, dinput, logits


def _to_nchw(a):
    return a.transpose(0, 3, 1, 2) if a.ndim == 4 else a


def stimulation_delta(activation: np.ndarray, stim: StimulationConfig) -> np.ndarray:
    """Per-sample, per-map bias offset ``lam * k * sum_i a_i / max_i a_i``.

    ``activation`` is (N, M, H, W) or (N, M). A map whose maximum is not
    positive receives no offset.
    """
    a = np.asarray(activation, dtype=np.float64)
    n, m = a.shape[:2]
    flat = a.reshape(n, m, -1)
    scale = stim.resolved_lambda() * stim.k
    if stim.mode == "per_stimulus":
        total = flat.sum(axis=2)
        peak = flat.max(axis=2)
    elif stim.mode == "batch":
        total = np.broadcast_to(flat.sum(axis=2).mean(axis=0), (n, m))
        peak = np.broadcast_to(flat.max(axis=(0, 2)), (n, m))
    else:
        raise ConfigError(f"unknown stimulation mode {stim.mode!r}")
    ratio = np.divide(total, peak, out=np.zeros((n, m)), where=peak > 0)
    return scale * ratio


# ---------------------------------------------------------------- factories
def _arch_specs(arch: str, num_classes: int) -> list[LayerSpec]:
    if arch == "logreg":
        return [dense("fc", num_classes), act("softmax")]
    if arch == "mlp_1000":
        return [dense("fc1", 1000), act("relu"), dense("fc", num_classes), act("softmax")]
    if arch == "cnn_mnist":
        return [conv("conv1", 32, 5), act("relu"), pool("pool1"),
                conv("conv2", 64, 5), act("relu"), pool("pool2"),
                dense("fc", num_classes), act("softmax")]
    if arch == "cnn_cifar":
        out = []
        widths = [32, 32, 64, 64, 128, 128]
        for i, wd in enumerate(widths, start=1):
            out += [conv(f"conv{i}", wd, 3, "same"), act("tanh")]
            if i % 2 == 0:
                out.append(pool(f"pool{i // 2}"))
        return out + [dense("fc", num_classes), act("softmax")]
    raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def output_shapes(specs, input_shape) -> dict[str, tuple]:
    c, h, w = input_shape
    shapes = {}
    flat = None
    for s in specs:
        if s.kind == "conv2d":
            kh, kw = s.kernel
            if s.padding == "valid":
                h, w = h - kh + 1, w - kw + 1
            c = s.out
            if h < 1 or w < 1:
                raise ShapeError(f"input {input_shape} too small for layer {s.name}")
            shapes[s.name] = (c, h, w)
        elif s.kind == "maxpool2":
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ShapeError(f"input {input_shape} too small for layer {s.name}")
            shapes[s.name] = (c, h, w)
        elif s.kind == "dense":
            flat = s.out
            shapes[s.name] = (flat,)
            c, h, w = flat, 1, 1
    return shapes


def build_network(architecture_id: str, input_shape=(1, 28, 28), num_classes: int = 10,
                  init_seed: int = 0, dtype=np.float32) -> Network:
    """Construct one of the supported architectures with fan-in scaled uniform weights."""
    specs = _arch_specs(architecture_id, num_classes)
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 3:
        raise ShapeError("input_shape must be (C, H, W)")
    shapes = output_shapes(specs, input_shape)
    net = Network(architecture_id, specs, input_shape, num_classes)
    prev = input_shape
    for idx, s in enumerate(specs):
        if s.kind not in ("conv2d", "dense"):
            if s.kind == "maxpool2":
                prev = shapes[s.name]
            continue
        fn = net._activation_after(idx)
        if s.kind == "conv2d":
            kh, kw = s.kernel
            fan_in = prev[0] * kh * kw
            wshape = (s.out, prev[0], kh, kw)
        else:
            fan_in = int(np.prod(prev))
            wshape = (s.out, fan_in)
        limit = np.sqrt((6.0 if fn == "relu" else 3.0) / fan_in)
        g = RandomStream(init_seed, idx).generator()
        net.weights[s.name] = g.uniform(-limit, limit, wshape).astype(dtype)
        bias = np.zeros(s.out, dtype=dtype)
        if s.kind == "conv2d":
            net.map_bias[s.name] = bias
        else:
            net.dense_bias[s.name] = bias
        prev = shapes[s.name]
    return net


def receptive_fields(net: Network) -> dict[str, tuple[int, int, int]]:
    """Analytic receptive field per stage as (size, jump, start offset).

    ``start`` is the input coordinate of the top-left RF pixel of output
    unit (0, 0); it is negative when zero padding is involved.
    """
    r, j, start = 1, 1, 0
    out = {}
    for s in net.specs:
        if s.kind == "conv2d":
            k = s.kernel[0]
            pad = k // 2 if s.padding == "same" else 0
            start = start - pad * j
            r = r + (k - 1) * j
        elif s.kind == "maxpool2":
            r = r + j
            j = j * 2
        else:
            continue
        out[s.name] = (r, j, start)
    return out


def forward(net: Network, batch, trace: bool = False, stim=None, inject=None, bias_offset=None):
    return net.forward(batch, trace=trace, stim=stim, inject=inject, bias_offset=bias_offset)
