"""Patch-based mask-pair discriminator: 4x4 conv stack in plain numpy with an
explicit backward pass.

Activations are kept channels-last (N, H, W, C) internally; the public input
layout is channels-first (N, 8, S, S) to match ``maskcore.crop_resize``.
Hidden layers are conv -> (instance norm with affine) -> LeakyReLU(0.2); the
last layer is a bare conv producing one logit per patch. The image-level logit
is the mean of the patch logits.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Union

import numpy as np

FORMAT_VERSION = 1
LEAK = 0.2
NORM_EPS = 1e-5

Padding = Union[int, str]


class NumericError(FloatingPointError):
    def __init__(self, layer: int, where: str = "forward"):
        super().__init__(f"non-finite values in {where} pass at layer {layer}")
        self.layer = layer


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    stride: int = 2
    norm: bool = True
    kernel: int = 4
    padding: Padding = 0

    def pads(self) -> tuple[int, int]:
        if self.padding == "same":
            if self.stride != 1:
                raise ValueError("'same' padding is only defined for stride 1")
            before = (self.kernel - 1) // 2
            return before, self.kernel - 1 - before
        p = int(self.padding)
        return p, p


@dataclass(frozen=True)
class MsnArch:
    layers: tuple[ConvSpec, ...]
    in_channels: int = 8
    input_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for spec in self.layers:
            if spec.stride not in (1, 2):
                raise ValueError(f"stride must be 1 or 2, got {spec.stride}")
        if self.layers and self.layers[-1].out_channels != 1:
            raise ValueError("last layer must emit a single logit channel")

    def shapes(self) -> list[tuple[int, int, int]]:
        """(in_channels, out_channels, output side) per layer."""
        out = []
        c, s = self.in_channels, self.input_size
        for spec in self.layers:
            lo, hi = spec.pads()
            s = (s + lo + hi - spec.kernel) // spec.stride + 1
            if s < 1:
                raise ValueError(f"layer collapses spatial size below 1 ({self})")
            out.append((c, spec.out_channels, s))
            c = spec.out_channels
        return out

    def to_json(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "input_size": self.input_size,
            "layers": [asdict(s) for s in self.layers],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MsnArch":
        return cls(
            tuple(ConvSpec(**s) for s in obj["layers"]),
            in_channels=obj["in_channels"],
            input_size=obj["input_size"],
        )


def default_arch() -> MsnArch:
    """Full-size stack, 256x256 input, unpadded convs -> 5x5 patch map."""
    return MsnArch(
        (
            ConvSpec(64, 2, norm=False),
            ConvSpec(128, 2),
            ConvSpec(256, 2),
            ConvSpec(512, 2),
            ConvSpec(512, 1),
            ConvSpec(512, 1),
            ConvSpec(1, 1, norm=False),
        ),
        input_size=256,
    )


def desk_arch(input_size: int = 64, width: int = 16) -> MsnArch:
    """Reduced stack for CPU training: three stride-2 stages and two 'same'
    stride-1 layers, giving an (input_size/8)^2 patch map."""
    return MsnArch(
        (
            ConvSpec(width, 2, norm=False, padding=1),
            ConvSpec(2 * width, 2, padding=1),
            ConvSpec(4 * width, 2, padding=1),
            ConvSpec(4 * width, 1, padding="same"),
            ConvSpec(1, 1, norm=False, padding="same"),
        ),
        input_size=input_size,
    )


@dataclass
class MsnModel:
    arch: MsnArch
    params: list[dict[str, np.ndarray]] = field(default_factory=list)

    def copy(self) -> "MsnModel":
        return MsnModel(self.arch, [{k: v.copy() for k, v in p.items()} for p in self.params])

    @property
    def dtype(self):
        return self.params[0]["w"].dtype if self.params else np.float64


def init_model(arch: MsnArch, seed: int = 0, dtype=np.float32, std: float = 0.02) -> MsnModel:
    rng = np.random.default_rng(seed)
    params = []
    for spec, (cin, cout, _) in zip(arch.layers, arch.shapes()):
        p = {
            "w": rng.normal(0.0, std, size=(cout, cin, spec.kernel, spec.kernel)).astype(dtype),
            "b": np.zeros(cout, dtype=dtype),
        }
        if spec.norm:
            p["gamma"] = np.ones(cout, dtype=dtype)
            p["beta"] = np.zeros(cout, dtype=dtype)
        params.append(p)
    return MsnModel(arch, params)


def validate_model(model: MsnModel) -> None:
    arch = model.arch
    if len(model.params) != len(arch.layers):
        raise ValueError("layer count does not match architecture")
    for i, (spec, (cin, cout, _), p) in enumerate(zip(arch.layers, arch.shapes(), model.params)):
        expect = {"w": (cout, cin, spec.kernel, spec.kernel), "b": (cout,)}
        if spec.norm:
            expect.update(gamma=(cout,), beta=(cout,))
        if set(p) != set(expect):
            raise ValueError(f"layer {i}: parameter names {sorted(p)} != {sorted(expect)}")
        for k, shape in expect.items():
            if p[k].shape != shape:
                raise ValueError(f"layer {i}: {k} has shape {p[k].shape}, expected {shape}")
            if not np.all(np.isfinite(p[k])):
                raise ValueError(f"layer {i}: {k} has non-finite values")


# -- conv primitives ------------------------------------------------------------

def _im2col(x, k, stride, pads):
    lo, hi = pads
    if lo or hi:
        x = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (N, Ho, Wo, C, k, k)
    n, ho, wo = win.shape[:3]
    return win.reshape(n * ho * wo, -1), (n, ho, wo), x.shape


def _col2im(dcols, padded_shape, out_hw, k, stride, pads):
    n, hp, wp, c = padded_shape
    ho, wo = out_hw
    dcols = dcols.reshape(n, ho, wo, c, k, k)
    dx = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[..., i, j]
    lo, hi = pads
    return dx[:, lo:hp - hi, lo:wp - hi, :]


class ForwardResult(NamedTuple):
    patch_logits: np.ndarray
    probability: Union[float, np.ndarray]


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _to_nhwc(model: MsnModel, x) -> np.ndarray:
    x = np.asarray(x)
    arch = model.arch
    want = (arch.in_channels, arch.input_size, arch.input_size)
    if x.shape[-3:] != want or x.ndim not in (3, 4):
        raise ValueError(f"input shape {x.shape} does not match architecture {want}")
    if x.ndim == 3:
        x = x[None]
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=model.dtype)


def _run(model: MsnModel, x, keep: bool):
    cache = []
    n_layers = len(model.arch.layers)
    for i, (spec, p) in enumerate(zip(model.arch.layers, model.params)):
        k = spec.kernel
        pads = spec.pads()
        cols, (n, ho, wo), padded_shape = _im2col(x, k, spec.stride, pads)
        wm = p["w"].reshape(p["w"].shape[0], -1)
        y = (cols @ wm.T + p["b"]).reshape(n, ho, wo, -1)
        entry = {"cols": cols, "padded_shape": padded_shape, "out_hw": (ho, wo)} if keep else None
        if spec.norm:
            mu = y.mean(axis=(1, 2), keepdims=True)
            var = y.var(axis=(1, 2), keepdims=True)
            inv_std = 1.0 / np.sqrt(var + NORM_EPS)
            xhat = (y - mu) * inv_std
            y = xhat * p["gamma"] + p["beta"]
            if keep:
                entry.update(xhat=xhat, inv_std=inv_std)
        if i < n_layers - 1:
            if keep:
                entry["pre_act"] = y
            y = np.where(y > 0, y, LEAK * y)
        if not np.all(np.isfinite(y)):
            raise NumericError(i)
        cache.append(entry)
        x = y
    return x[..., 0], cache


def forward(model: MsnModel, x) -> ForwardResult:
    """Patch logits and P(mask in channel 3 beats mask in channel 7).

    ``x`` is (8, S, S) or (N, 8, S, S); a single input returns scalars.
    """
    single = np.asarray(x).ndim == 3
    logits, _ = _run(model, _to_nhwc(model, x), keep=False)
    z = logits.reshape(logits.shape[0], -1).astype(np.float64).mean(axis=1)
    prob = _sigmoid(z)
    if single:
        return ForwardResult(logits[0], float(prob[0]))
    return ForwardResult(logits, prob)


def bce_with_logits(z, y) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))


def loss_and_grad(model: MsnModel, x, labels):
    """Mean binary cross-entropy over the batch and its exact gradient.

    Returns (loss, grads, probabilities) where grads mirrors ``model.params``.
    """
    xs = _to_nhwc(model, x)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if xs.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.shape[0] != xs.shape[0]:
        raise ValueError("one label per sample required")
    logits, cache = _run(model, xs, keep=True)
    n, h, w = logits.shape
    z = logits.reshape(n, -1).astype(np.float64).mean(axis=1)
    loss = float(bce_with_logits(z, labels).mean())
    prob = _sigmoid(z)
    dz = (prob - labels) / n
    dy = np.broadcast_to((dz / (h * w))[:, None, None, None], (n, h, w, 1)).astype(model.dtype)
    grads = _backward(model, cache, dy)
    return loss, grads, prob


def _backward(model: MsnModel, cache, dy):
    grads = [None] * len(model.params)
    n_layers = len(model.arch.layers)
    for i in range(n_layers - 1, -1, -1):
        spec, p, c = model.arch.layers[i], model.params[i], cache[i]
        g = {}
        if i < n_layers - 1:
            dy = np.where(c["pre_act"] > 0, dy, LEAK * dy)
        if spec.norm:
            xhat, inv_std = c["xhat"], c["inv_std"]
            g["gamma"] = (dy * xhat).sum(axis=(0, 1, 2))
            g["beta"] = dy.sum(axis=(0, 1, 2))
            dxhat = dy * p["gamma"]
            m = xhat.shape[1] * xhat.shape[2]
            dy = (inv_std / m) * (
                m * dxhat
                - dxhat.sum(axis=(1, 2), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
            )
        dflat = dy.reshape(-1, dy.shape[-1])
        g["w"] = (dflat.T @ c["cols"]).reshape(p["w"].shape)
        g["b"] = dflat.sum(axis=0)
        if not all(np.all(np.isfinite(v)) for v in g.values()):
            raise NumericError(i, "backward")
        grads[i] = g
        if i > 0:
            wm = p["w"].reshape(p["w"].shape[0], -1)
            dy = _col2im(dflat @ wm, c["padded_shape"], c["out_hw"], spec.kernel, spec.stride, spec.pads())
    return grads


def count_params_flops(arch: MsnArch) -> dict:
    """Analytic parameter and multiply-accumulate counts at ``arch.input_size``.

    Conv layers contribute k*k*cin*cout + cout parameters and k*k*cin*cout MACs
    per output position. The per-channel scale and shift of normalized layers
    are reported apart as ``norm_params``.
    """
    params = 0
    norm_params = 0
    macs = 0
    per_layer = []
    for spec, (cin, cout, side) in zip(arch.layers, arch.shapes()):
        weights = spec.kernel * spec.kernel * cin * cout
        lp = weights + cout
        ln = 2 * cout if spec.norm else 0
        lm = weights * side * side
        per_layer.append({"params": lp, "norm_params": ln, "macs": lm, "out_side": side})
        params += lp
        norm_params += ln
        macs += lm
    return {"params": params, "norm_params": norm_params, "flops": macs, "layers": per_layer}


# -- persistence ----------------------------------------------------------------

def save_model(model: MsnModel, path) -> None:
    """Write an .npz-compatible zip with fixed timestamps (byte-reproducible)."""
    header = json.dumps({"format": "msn", "version": FORMAT_VERSION, "arch": model.arch.to_json()})
    entries = [("__header__", np.frombuffer(header.encode(), dtype=np.uint8))]
    for i, p in enumerate(model.params):
        for k in sorted(p):
            entries.append((f"l{i}.{k}", p[k]))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in entries:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_model(path) -> MsnModel:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != "msn" or header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model file header {header.get('format')!r} v{header.get('version')}")
        arch = MsnArch.from_json(header["arch"])
        params = [dict() for _ in arch.layers]
        for key in data.files:
            if key == "__header__":
                continue
            layer, name = key.split(".", 1)
            params[int(layer[1:])][name] = data[key]
    model = MsnModel(arch, params)
    validate_model(model)
    return model
