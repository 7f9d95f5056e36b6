"""Deep nonlocal means network over square search windows.

A window of side ``2R+1`` becomes ``N = (2R+1)^2`` tokens in row-major order.
Each token is the pixel's ``(2k+1)^2`` neighborhood correlated with ``d``
learned masks and rectified, plus a sinusoidal positional code.  Stacked
encoder cells then mix tokens with multi-head attention (softmax or linear
kernel attention), followed by residual layer norms and a ReLU FFN.  An affine
head reduces every token to one amplitude.

Windows are divided by their mean before embedding and predictions are
multiplied back, so the network sees speckle at a fixed scale.

Parameters live in a flat ``dict[str, np.ndarray]``; see :func:`param_shapes`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .attention import _SOFTMAX_BLOCK, attention_linear, attention_softmax
from .errors import ContractError, ParameterError, ShapeError
from .raster import as_raster
from .speckle import make_rng

MODES = ("linear", "softmax")
Params = dict  # name -> float32 ndarray


@dataclass(frozen=True)
class ModelConfig:
    search_radius: int = 36
    neighborhood_radius: int = 9
    channels: int = 64
    layers: int = 2
    heads: int = 8
    ffn_dim: int = field(default=0)  # 0 -> 2 * channels
    attention_mode: str = "linear"

    def __post_init__(self):
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 2 * self.channels)
        for name in ("search_radius", "neighborhood_radius", "channels", "layers", "heads", "ffn_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ParameterError(f"{name} must be an integer, got {value!r}")
        if self.neighborhood_radius < 1:
            raise ParameterError("neighborhood_radius must be >= 1")
        if self.search_radius <= self.neighborhood_radius:
            raise ParameterError("search_radius must exceed neighborhood_radius")
        if self.channels < 2 or self.channels % 2:
            raise ParameterError(f"channels must be an even number >= 2, got {self.channels}")
        if self.heads < 1 or self.channels % self.heads:
            raise ParameterError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if self.layers < 1 or self.ffn_dim < 1:
            raise ParameterError("layers and ffn_dim must be >= 1")
        if self.attention_mode not in MODES:
            raise ParameterError(f"attention_mode must be one of {MODES}, got {self.attention_mode!r}")

    @property
    def window_side(self) -> int:
        return 2 * self.search_radius + 1

    @property
    def tokens(self) -> int:
        return self.window_side ** 2

    @property
    def patch_side(self) -> int:
        return 2 * self.neighborhood_radius + 1

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown model config field(s): {sorted(unknown)}")
        return cls(**data)


FULL_CONFIG = ModelConfig()
SMALL_CONFIG = ModelConfig(layers=1, heads=2)
LARGE_CONFIG = ModelConfig(search_radius=64, neighborhood_radius=10, layers=1, heads=2)
SMOKE_CONFIG = ModelConfig(search_radius=8, neighborhood_radius=2, channels=16, layers=1, heads=2)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, s = config.channels, config.ffn_dim, config.patch_side
    shapes: dict[str, tuple[int, ...]] = {"masks": (d, s, s)}
    for l in range(config.layers):
        p = f"layer{l}."
        shapes.update({
            p + "w_q": (d, d), p + "b_q": (d,),
            p + "w_k": (d, d), p + "b_k": (d,),
            p + "w_v": (d, d), p + "b_v": (d,),
            p + "ln1_gain": (d,), p + "ln1_bias": (d,),
            p + "w_1": (d, f), p + "b_1": (f,),
            p + "w_2": (f, d), p + "b_2": (d,),
            p + "ln2_gain": (d,), p + "ln2_bias": (d,),
        })
    shapes["head.w"] = (d, 1)
    shapes["head.b"] = (1,)
    return shapes


def _fan_in(name: str, config: ModelConfig) -> int:
    key = name.rsplit(".", 1)[-1]
    if name == "masks":
        return config.patch_side ** 2
    if key in ("w_2", "b_2"):
        return config.ffn_dim
    return config.channels


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; layer norms start at gain 1, bias 0."""
    rng = make_rng(seed, 0xD1)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("_gain"):
            params[name] = np.ones(shape, np.float32)
        elif name.endswith("_bias"):
            params[name] = np.zeros(shape, np.float32)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, config))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return params


def check_params(params: Params, config: ModelConfig) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing, extra = set(expected) - set(params), set(params) - set(expected)
        raise ShapeError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {tuple(params[name].shape)}")
        if not np.all(np.isfinite(params[name])):
            raise ValueError(f"{name} contains non-finite values")


# ---------------------------------------------------------------- stages

def extract_neighborhoods(window, k: int) -> np.ndarray:
    """One ``(2k+1) x (2k+1)`` patch per window pixel, row-major; reflect padding."""
    win = np.asarray(window, dtype=np.float32)
    if win.ndim != 2 or win.shape[0] != win.shape[1] or win.shape[0] % 2 == 0:
        raise ShapeError(f"window must be square with odd side, got shape {win.shape}")
    if k < 0:
        raise ParameterError(f"neighborhood radius must be >= 0, got {k}")
    side = 2 * k + 1
    pad = np.pad(win, k, mode="reflect") if k else win
    patches = np.lib.stride_tricks.sliding_window_view(pad, (side, side))
    return np.ascontiguousarray(patches.reshape(-1, side, side))


def embed_pixels(patches, masks) -> np.ndarray:
    """Channel ``i`` of token ``t`` is ``relu(sum(masks[i] * patches[t]))``."""
    p, m = np.asarray(patches), np.asarray(masks)
    if p.shape[1:] != m.shape[1:]:
        raise ShapeError(f"patch shape {p.shape[1:]} does not match mask shape {m.shape[1:]}")
    flat = p.reshape(p.shape[0], -1).astype(np.float64) @ m.reshape(m.shape[0], -1).astype(np.float64).T
    return np.maximum(flat, 0).astype(np.float32)


def positional_encoding(n: int, d: int) -> np.ndarray:
    """Sinusoidal codes: ``P[i, 2j] = sin(i / 10000^(2j/d))``, ``P[i, 2j+1] = cos(...)``."""
    if d < 2 or d % 2:
        raise ParameterError(f"positional encoding width must be even, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((n, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe.astype(np.float32)


def _layer(P: dict, l: int, name: str):
    return P[f"layer{l}.{name}"]


def _project(x, P, l):
    q = x @ _layer(P, l, "w_q") + _layer(P, l, "b_q")
    k = x @ _layer(P, l, "w_k") + _layer(P, l, "b_k")
    v = x @ _layer(P, l, "w_v") + _layer(P, l, "b_v")
    return q, k, v


def _head_linear(q, k, v):
    fq, fk = ad.phi(q), ad.phi(k)
    s = fk.T @ v
    z = ad.sum_rows(fk)
    return (fq @ s) / (fq @ z.T)


def _head_softmax(q, k, v):
    w = ad.softmax_rows(q @ k.T, scale=1.0 / math.sqrt(q.shape[1]))
    return w @ v


def _multihead(g: ad.Graph, q, k, v, heads: int, mode: str):
    d = q.shape[1]
    dk = d // heads
    if not g.record:
        fn = attention_linear if mode == "linear" else attention_softmax
        parts = [fn(q.data[:, h * dk:(h + 1) * dk], k.data[:, h * dk:(h + 1) * dk], v.data[:, h * dk:(h + 1) * dk])
                 for h in range(heads)]
        return g.constant(np.concatenate(parts, axis=1))
    head = _head_linear if mode == "linear" else _head_softmax
    outs = [head(ad.slice_cols(q, h * dk, (h + 1) * dk), ad.slice_cols(k, h * dk, (h + 1) * dk),
                 ad.slice_cols(v, h * dk, (h + 1) * dk)) for h in range(heads)]
    return outs[0] if heads == 1 else ad.concat_cols(outs)


def _cell(g: ad.Graph, x, P, l: int, heads: int, mode: str):
    q, k, v = _project(x, P, l)
    y = ad.layer_norm(x + _multihead(g, q, k, v, heads, mode), _layer(P, l, "ln1_gain"), _layer(P, l, "ln1_bias"))
    hidden = ad.relu(y @ _layer(P, l, "w_1") + _layer(P, l, "b_1"))
    f = hidden @ _layer(P, l, "w_2") + _layer(P, l, "b_2")
    return ad.layer_norm(y + f, _layer(P, l, "ln2_gain"), _layer(P, l, "ln2_bias"))


def window_scale(window: np.ndarray) -> float:
    m = float(np.mean(window, dtype=np.float64))
    return m if m > 0 else 1.0


def build_forward(g: ad.Graph, window: np.ndarray, P: dict, config: ModelConfig, mode: str | None = None,
                  stop_after: int | None = None, use_pe: bool = True):
    """Record the forward pass on ``g`` with parameter tensors ``P``.

    Returns the ``(side, side)`` prediction tensor before clamping, or, when
    ``stop_after`` is given, the token matrix after that many cells.
    """
    mode = mode or config.attention_mode
    if mode not in MODES:
        raise ContractError(f"unknown attention mode {mode!r}")
    side = config.window_side
    win = np.asarray(window, dtype=np.float32)
    if win.shape != (side, side):
        raise ShapeError(f"window must be {side}x{side} for search radius {config.search_radius}, got {win.shape}")
    scale = window_scale(win)
    patches = extract_neighborhoods(win / np.float32(scale), config.neighborhood_radius)
    flat = g.constant(patches.reshape(config.tokens, -1))
    masks = ad.reshape(P["masks"], (config.channels, -1))
    x = ad.relu(flat @ masks.T)
    if use_pe:
        x = x + g.constant(positional_encoding(config.tokens, config.channels))
    for l in range(config.layers if stop_after is None else stop_after):
        x = _cell(g, x, P, l, config.heads, mode)
    if stop_after is not None:
        return x
    out = (x @ P["head.w"] + P["head.b"]) * float(scale)
    return ad.reshape(out, (side, side))


def _inference_tensors(g: ad.Graph, params: Params) -> dict:
    return {name: g.constant(arr) for name, arr in params.items()}


def encoder_cell(tokens, params: Params, layer: int, heads: int, mode: str) -> np.ndarray:
    g = ad.Graph(np.float32, record=False)
    return _cell(g, g.constant(tokens), _inference_tensors(g, params), layer, heads, mode).data


def forward_window(window, params: Params, config: ModelConfig, mode: str | None = None) -> np.ndarray:
    """Denoise one ``(2R+1)^2`` window; output amplitudes are clamped at 0."""
    g = ad.Graph(np.float32, record=False)
    out = build_forward(g, as_raster(window, name="window"), _inference_tensors(g, params), config, mode)
    return np.maximum(out.data, 0).astype(np.float32)


def export_embeddings(window, params: Params, config: ModelConfig, layer: int, mode: str | None = None) -> np.ndarray:
    """Token activations after ``layer`` cells (0 = embeddings + positional code), shape ``N x d``."""
    if not 0 <= layer <= config.layers:
        raise ContractError(f"layer must be within [0, {config.layers}], got {layer}")
    g = ad.Graph(np.float32, record=False)
    out = build_forward(g, as_raster(window, name="window"), _inference_tensors(g, params), config, mode,
                        stop_after=layer)
    return np.ascontiguousarray(out.data, dtype=np.float32)


def tile_origins(length: int, side: int, stride: int) -> list[int]:
    starts = list(range(0, length - side + 1, stride))
    if starts[-1] != length - side:
        starts.append(length - side)
    return starts


def denoise_image(image, params: Params, config: ModelConfig, stride: int | None = None,
                  mode: str | None = None, threads: int = 1) -> np.ndarray:
    """Slide the window over ``image`` and average overlapping predictions uniformly.

    Images smaller than one window are reflect-padded at the bottom/right and
    cropped afterwards.  Tiles may run on a thread pool; accumulation always
    follows the fixed tile order, so the result does not depend on ``threads``.
    """
    img = as_raster(image)
    check_params(params, config)
    side = config.window_side
    stride = side if stride is None else int(stride)
    if not 1 <= stride <= side:
        raise ParameterError(f"stride must be within [1, {side}], got {stride}")
    h, w = img.shape
    ph, pw = max(0, side - h), max(0, side - w)
    work = np.pad(img, ((0, ph), (0, pw)), mode="reflect") if (ph or pw) else img
    H, W = work.shape
    origins = [(r, c) for r in tile_origins(H, side, stride) for c in tile_origins(W, side, stride)]

    def run(origin):
        r, c = origin
        return forward_window(work[r:r + side, c:c + side], params, config, mode)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, origins))
    else:
        outputs = [run(o) for o in origins]
    acc = np.zeros((H, W), dtype=np.float64)
    count = np.zeros((H, W), dtype=np.float64)
    for (r, c), pred in zip(origins, outputs):
        acc[r:r + side, c:c + side] += pred
        count[r:r + side, c:c + side] += 1.0
    return (acc / count)[:h, :w].astype(np.float32)


def peak_memory_estimate(config: ModelConfig, mode: str) -> int:
    """Rough bytes held while one window is processed.

    The softmax kernels stream query rows, so their score buffer is at most
    ``_SOFTMAX_BLOCK`` rows of length N rather than the full N x N matrix.
    """
    n, d = config.tokens, config.channels
    dk = config.head_dim
    base = 8 * n * (4 * d + config.ffn_dim)
    if mode == "softmax":
        return base + 8 * n * min(n, _SOFTMAX_BLOCK)
    return base + 8 * dk * dk
