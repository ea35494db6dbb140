"""Generator architectures: a noise-to-image texture network and a small
residual stylizer, each buildable with instance norm, batch norm, or none.

Parameters live in an ordered name -> Tensor map so the SGD loop and the
serializer can address every trainable tensor by a stable name.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .tensor import ShapeError, Tensor, concat

_PARAMS_MAGIC = b"JZGEN"
_PARAMS_VERSION = 1


class ParamsFileError(ValueError):
    """Parameter file is corrupt or does not match the expected network."""


@dataclass(frozen=True)
class ArchDescriptor:
    """Everything needed to rebuild a generator's parameter skeleton.

    For texture nets, noise_dim is the input noise vector length; for
    stylizers it is the number of noise channels concatenated to the content
    image.  out_size is the output edge for texture nets and 0 for stylizers
    (fully convolutional, any multiple of 4).
    """

    kind: str
    norm: str
    noise_dim: int
    out_size: int
    width: int
    hidden: int
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in ("texture", "stylizer"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.norm not in ("in", "bn", "none"):
            raise ValueError(f"unknown norm kind {self.norm!r}")

    def canonical(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(vars(self).items()))

    @classmethod
    def from_canonical(cls, text: str) -> "ArchDescriptor":
        kv = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            kv[key] = value
        try:
            return cls(kind=kv["kind"], norm=kv["norm"], noise_dim=int(kv["noise_dim"]),
                       out_size=int(kv["out_size"]), width=int(kv["width"]),
                       hidden=int(kv["hidden"]), norm_eps=float(kv["norm_eps"]))
        except (KeyError, ValueError) as exc:
            raise ParamsFileError(f"bad architecture descriptor: {exc}") from exc


@dataclass
class GeneratorParams:
    """A generator's descriptor plus its named trainable tensors."""

    desc: ArchDescriptor
    params: dict[str, Tensor] = field(default_factory=dict)

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


def _add_norm_params(params: dict, rng, name: str, channels: int, norm: str) -> None:
    if norm == "none":
        return
    params[f"{name}.norm_scale"] = Tensor(np.ones(channels))
    params[f"{name}.norm_bias"] = Tensor(np.zeros(channels))


def _texture_stage_count(out_size: int) -> int:
    if out_size < 8 or out_size % 4 != 0:
        raise ValueError(f"out_size must be a power-of-two multiple of 4, >= 8; got {out_size}")
    ratio = out_size // 4
    stages = int(round(math.log2(ratio)))
    if 4 * (2 ** stages) != out_size:
        raise ValueError(f"out_size must be a power-of-two multiple of 4; got {out_size}")
    return stages


def build_texture_net(noise_dim: int, out_size: int, norm: str = "in", seed: int = 0,
                      width: int = 16, hidden: int = 64, norm_eps: float = 1e-5) -> GeneratorParams:
    """Noise-vector generator: two fully-connected layers, reshape to a 4x4
    map, then stride-2 fractionally-strided convolutions double the extent
    up to out_size, followed by a 3x3 conv down to RGB (linear output)."""
    if noise_dim < 1:
        raise ValueError("noise_dim must be >= 1")
    stages = _texture_stage_count(out_size)
    desc = ArchDescriptor(kind="texture", norm=norm, noise_dim=noise_dim,
                          out_size=out_size, width=width, hidden=hidden, norm_eps=norm_eps)
    rng = np.random.default_rng(seed)
    p: dict[str, Tensor] = {}
    p["fc1.weight"] = Tensor(_he(rng, (hidden, noise_dim), noise_dim))
    p["fc1.bias"] = Tensor(np.zeros(hidden))
    p["fc2.weight"] = Tensor(_he(rng, (width * 16, hidden), hidden))
    p["fc2.bias"] = Tensor(np.zeros(width * 16))
    for s in range(stages):
        p[f"up{s}.weight"] = Tensor(_he(rng, (width, width, 4, 4), width * 16))
        p[f"up{s}.bias"] = Tensor(np.zeros(width))
        _add_norm_params(p, rng, f"up{s}", width, norm)
    p["out.weight"] = Tensor(_he(rng, (3, width, 3, 3), width * 9))
    p["out.bias"] = Tensor(np.zeros(3))
    return GeneratorParams(desc=desc, params=p)


def build_stylizer(norm: str = "in", noise_channels: int = 2, seed: int = 0,
                   width: int = 16, norm_eps: float = 1e-5) -> GeneratorParams:
    """Residual stylizer: two stride-2 down convolutions, three residual
    blocks, two stride-2 up convolutions back to RGB.  The content image is
    concatenated channelwise with noise planes at the input.  Normalization
    follows every convolution except the output one."""
    if noise_channels < 0:
        raise ValueError("noise_channels must be >= 0")
    desc = ArchDescriptor(kind="stylizer", norm=norm, noise_dim=noise_channels,
                          out_size=0, width=width, hidden=0, norm_eps=norm_eps)
    rng = np.random.default_rng(seed)
    w2 = width * 2
    c_in = 3 + noise_channels
    p: dict[str, Tensor] = {}
    p["down1.weight"] = Tensor(_he(rng, (width, c_in, 4, 4), c_in * 16))
    p["down1.bias"] = Tensor(np.zeros(width))
    _add_norm_params(p, rng, "down1", width, norm)
    p["down2.weight"] = Tensor(_he(rng, (w2, width, 4, 4), width * 16))
    p["down2.bias"] = Tensor(np.zeros(w2))
    _add_norm_params(p, rng, "down2", w2, norm)
    for r in range(3):
        for half in (1, 2):
            p[f"res{r}.conv{half}.weight"] = Tensor(_he(rng, (w2, w2, 3, 3), w2 * 9))
            p[f"res{r}.conv{half}.bias"] = Tensor(np.zeros(w2))
            _add_norm_params(p, rng, f"res{r}.conv{half}", w2, norm)
    p["up1.weight"] = Tensor(_he(rng, (w2, width, 4, 4), w2 * 16))
    p["up1.bias"] = Tensor(np.zeros(width))
    _add_norm_params(p, rng, "up1", width, norm)
    p["out.weight"] = Tensor(_he(rng, (width, 3, 4, 4), width * 16))
    p["out.bias"] = Tensor(np.zeros(3))
    return GeneratorParams(desc=desc, params=p)


def _layer(g: GeneratorParams, name: str) -> layers.LayerParams:
    return layers.LayerParams(weight=g.params[f"{name}.weight"],
                              bias=g.params[f"{name}.bias"])


def _norm_block(g: GeneratorParams, name: str, x: Tensor,
                capture: dict | None = None) -> Tensor:
    norm = g.desc.norm
    if norm == "none":
        return x
    if norm == "in":
        y = layers.instance_norm(x, eps=g.desc.norm_eps)
    else:
        y = layers.batch_norm(x, eps=g.desc.norm_eps)
    if capture is not None:
        capture[name] = y.data
    return layers.scale_bias(y, g.params[f"{name}.norm_scale"], g.params[f"{name}.norm_bias"])


def _as_tensor(x, name: str) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=False)


def forward_texture(g: GeneratorParams, z, capture: dict | None = None) -> Tensor:
    """Map a (N, noise_dim) noise batch to (N, 3, out_size, out_size)."""
    if g.desc.kind != "texture":
        raise ShapeError(f"forward_texture on a {g.desc.kind!r} generator")
    z = _as_tensor(z, "z")
    if z.ndim != 2 or z.shape[1] != g.desc.noise_dim:
        raise ShapeError(f"forward_texture: expected (N, {g.desc.noise_dim}) noise, got {z.shape}")
    n = z.shape[0]
    width = g.desc.width
    h = layers.linear(z, _layer(g, "fc1")).relu()
    h = layers.linear(h, _layer(g, "fc2")).relu()
    x = h.reshape((n, width, 4, 4))
    stages = _texture_stage_count(g.desc.out_size)
    for s in range(stages):
        x = layers.conv_transpose2d(x, _layer(g, f"up{s}"), stride=2, padding=1)
        x = _norm_block(g, f"up{s}", x, capture)
        x = x.relu()
    return layers.conv2d(x, _layer(g, "out"), stride=1, padding=1)


def forward_stylized(g: GeneratorParams, x0, z=None, capture: dict | None = None) -> Tensor:
    """Map a (N, 3, H, W) content batch (plus optional noise planes) to a
    stylized batch of the same shape.  H and W must be multiples of 4."""
    if g.desc.kind != "stylizer":
        raise ShapeError(f"forward_stylized on a {g.desc.kind!r} generator")
    x0 = _as_tensor(x0, "x0")
    if x0.ndim != 4 or x0.shape[1] != 3:
        raise ShapeError(f"forward_stylized: expected (N, 3, H, W) content, got {x0.shape}")
    n, _, h, w = x0.shape
    if h % 4 or w % 4:
        raise ShapeError(f"forward_stylized: spatial extent must be a multiple of 4, got {h}x{w}")
    k = g.desc.noise_dim
    if k > 0:
        if z is None:
            raise ShapeError(f"forward_stylized: generator expects {k} noise channel(s)")
        z = _as_tensor(z, "z")
        if z.shape != (n, k, h, w):
            raise ShapeError(f"forward_stylized: expected ({n}, {k}, {h}, {w}) noise, "
                             f"got {z.shape}")
        inp = concat([x0, z], axis=1)
    else:
        inp = x0

    x = layers.conv2d(inp, _layer(g, "down1"), stride=2, padding=1)
    x = _norm_block(g, "down1", x, capture).relu()
    x = layers.conv2d(x, _layer(g, "down2"), stride=2, padding=1)
    x = _norm_block(g, "down2", x, capture).relu()
    for r in range(3):
        t = layers.conv2d(x, _layer(g, f"res{r}.conv1"), stride=1, padding=1)
        t = _norm_block(g, f"res{r}.conv1", t, capture).relu()
        t = layers.conv2d(t, _layer(g, f"res{r}.conv2"), stride=1, padding=1)
        t = _norm_block(g, f"res{r}.conv2", t, capture)
        x = x + t
    x = layers.conv_transpose2d(x, _layer(g, "up1"), stride=2, padding=1)
    x = _norm_block(g, "up1", x, capture).relu()
    return layers.conv_transpose2d(x, _layer(g, "out"), stride=2, padding=1)


def forward(g: GeneratorParams, z, x0=None) -> Tensor:
    """Dispatch on the generator kind: texture nets consume z only,
    stylizers consume (x0, z)."""
    if g.desc.kind == "texture":
        return forward_texture(g, z)
    if x0 is None:
        raise ShapeError("stylizer forward requires a content batch")
    return forward_stylized(g, x0, z)


def _skeleton(desc: ArchDescriptor) -> GeneratorParams:
    if desc.kind == "texture":
        return build_texture_net(desc.noise_dim, desc.out_size, desc.norm, seed=0,
                                 width=desc.width, hidden=desc.hidden, norm_eps=desc.norm_eps)
    return build_stylizer(desc.norm, desc.noise_dim, seed=0,
                          width=desc.width, norm_eps=desc.norm_eps)


def expected_param_count(desc: ArchDescriptor) -> int:
    """Closed-form trainable parameter count for a descriptor."""
    norm_per_channel = 2 if desc.norm != "none" else 0
    if desc.kind == "texture":
        w = desc.width
        stages = _texture_stage_count(desc.out_size)
        count = desc.hidden * desc.noise_dim + desc.hidden          # fc1
        count += (w * 16) * desc.hidden + w * 16                    # fc2
        count += stages * (w * w * 16 + w + norm_per_channel * w)   # up stages
        count += 3 * w * 9 + 3                                      # output conv
        return count
    w, w2, k = desc.width, desc.width * 2, desc.noise_dim
    count = w * (3 + k) * 16 + w + norm_per_channel * w             # down1
    count += w2 * w * 16 + w2 + norm_per_channel * w2               # down2
    count += 3 * 2 * (w2 * w2 * 9 + w2 + norm_per_channel * w2)     # residual blocks
    count += w2 * w * 16 + w + norm_per_channel * w                 # up1
    count += w * 3 * 16 + 3                                         # output
    return count


def save_params(g: GeneratorParams, path) -> None:
    """Bit-exact parameter snapshot: magic, version, canonical descriptor
    text, then each named tensor as shape plus little-endian float64 data."""
    desc_text = g.desc.canonical().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PARAMS_MAGIC)
        fh.write(struct.pack("<II", _PARAMS_VERSION, len(desc_text)))
        fh.write(desc_text)
        fh.write(struct.pack("<I", len(g.params)))
        for name, t in g.params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_params(path, expected: ArchDescriptor | None = None) -> GeneratorParams:
    """Load a parameter snapshot, validating structure against a freshly
    built skeleton of the stored descriptor.  No partial state escapes on
    error."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != _PARAMS_MAGIC:
        raise ParamsFileError(f"{path}: not a generator parameter file")
    try:
        version, desc_len = struct.unpack_from("<II", blob, 5)
        offset = 13
        if version != _PARAMS_VERSION:
            raise ParamsFileError(f"{path}: unsupported version {version}")
        desc = ArchDescriptor.from_canonical(blob[offset:offset + desc_len].decode("utf-8"))
        offset += desc_len
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        loaded: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            n_items = int(np.prod(shape)) if ndim else 1
            nbytes = n_items * 8
            if offset + nbytes > len(blob):
                raise ParamsFileError(f"{path}: truncated tensor data for {name!r}")
            data = np.frombuffer(blob, dtype="<f8", count=n_items, offset=offset)
            loaded[name] = data.reshape(shape).astype(np.float64)
            offset += nbytes
        if offset != len(blob):
            raise ParamsFileError(f"{path}: trailing bytes after parameter data")
    except struct.error as exc:
        raise ParamsFileError(f"{path}: corrupted parameter file: {exc}") from exc

    if expected is not None and desc != expected:
        raise ParamsFileError(
            f"{path}: architecture mismatch (file holds kind={desc.kind!r} "
            f"norm={desc.norm!r}, expected kind={expected.kind!r} norm={expected.norm!r})")
    skeleton = _skeleton(desc)
    want = {name: t.shape for name, t in skeleton.params.items()}
    have = {name: arr.shape for name, arr in loaded.items()}
    if want != have:
        missing = sorted(set(want) - set(have))
        extra = sorted(set(have) - set(want))
        raise ParamsFileError(f"{path}: parameter set mismatch "
                              f"(missing {missing or 'none'}, unexpected {extra or 'none'})")
    for name, arr in loaded.items():
        skeleton.params[name].data = arr
    return skeleton
