"""Residual U-Net: multi-scale encoder/decoder whose output is ReLU(input + residual)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..tensorio import rng_stream
from . import layers as L


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 3
    base_channels: int = 32
    convs_per_level: int = 2
    kernel: tuple[int, int, int] = (3, 3, 3)
    temporal_pool: bool = True
    frames: int = 20

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.levels < 1 or self.base_channels < 1 or self.convs_per_level < 1:
            raise ValueError("levels, base_channels and convs_per_level must be >= 1")
        if any(k % 2 == 0 for k in self.kernel):
            raise ValueError("kernel sizes must be odd")

    @classmethod
    def desk(cls, **kw) -> "UNetConfig":
        return cls(**{"levels": 2, "base_channels": 16, **kw})

    @classmethod
    def flat2d(cls, base: "UNetConfig") -> "UNetConfig":
        """Same network with per-frame 3x3 kernels and no temporal pooling."""
        return cls(**{**asdict(base), "kernel": (1, base.kernel[1], base.kernel[2]),
                      "temporal_pool": False})

    @property
    def is_2d(self) -> bool:
        return self.kernel[0] == 1 and not self.temporal_pool

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.levels)]

    def pool_windows(self) -> list[tuple[int, int, int]]:
        windows, t = [], self.frames
        for _ in range(self.levels - 1):
            w = L.pool_window(t, self.temporal_pool)
            windows.append(w)
            t //= w[0]
        return windows

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        return d

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel
        ch = self.channels
        shapes: dict[str, tuple[int, ...]] = {}

        def conv(name, cin, cout):
            shapes[f"{name}.w"] = (cout, cin, *k)
            shapes[f"{name}.b"] = (cout,)

        cin = 1
        for lvl, c in enumerate(ch):
            for i in range(self.convs_per_level):
                conv(f"enc{lvl}.conv{i}", cin if i == 0 else c, c)
            cin = c
        windows = self.pool_windows()
        for lvl in reversed(range(self.levels - 1)):
            c = ch[lvl]
            shapes[f"up{lvl}.w"] = (ch[lvl + 1], c, *windows[lvl])
            shapes[f"up{lvl}.b"] = (c,)
            for i in range(self.convs_per_level):
                conv(f"dec{lvl}.conv{i}", 2 * c if i == 0 else c, c)
        conv("final", ch[0], 1)
        return shapes

    def param_count(self) -> int:
        """Closed-form parameter count."""
        kv = int(np.prod(self.kernel))
        ch = self.channels
        n, cin = 0, 1
        for c in ch:
            n += cin * c * kv + c + (self.convs_per_level - 1) * (c * c * kv + c)
            cin = c
        for lvl, w in enumerate(self.pool_windows()):
            c = ch[lvl]
            n += ch[lvl + 1] * c * int(np.prod(w)) + c
            n += 2 * c * c * kv + c + (self.convs_per_level - 1) * (c * c * kv + c)
        return n + ch[0] * kv + 1


@dataclass
class Tape:
    """Forward intermediates of one :meth:`UNet.forward` call."""

    version: int
    entries: dict = field(default_factory=dict)
    consumed: bool = False


class UNet:
    def __init__(self, config: UNetConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0, dtype=np.float32):
        self.config = config
        self.version = 0
        if params is None:
            params = self._init_params(seed, dtype)
        shapes = config.param_shapes()
        if set(params) != set(shapes):
            raise ValueError("parameter names do not match config")
        for name, arr in params.items():
            if arr.shape != shapes[name]:
                raise ValueError(f"{name}: shape {arr.shape} != {shapes[name]}")
        self.params = params

    def _init_params(self, seed, dtype):
        rng = rng_stream(seed, "unet-init")
        params = {}
        for name, shape in self.config.param_shapes().items():
            if name.endswith(".b") or name.startswith("final."):
                params[name] = np.zeros(shape, dtype=dtype)
                continue
            if name.startswith("up"):
                fan_in = shape[0]
            else:
                fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return params

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "UNet":
        return UNet(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def bump(self):
        """Mark parameters as modified; outstanding tapes become stale."""
        self.version += 1

    # ------------------------------------------------------------------ forward

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        """Run the network on a (T, H, W) or (1, T, H, W) input."""
        cfg = self.config
        p = self.params
        dtype = p["final.w"].dtype
        squeeze = x.ndim == 3
        x = np.asarray(x, dtype=dtype).reshape((1, *x.shape[-3:]))
        t, h, w = x.shape[1:]
        if t != cfg.frames:
            raise ValueError(f"network built for {cfg.frames} frames, got {t}")
        f = 2 ** (cfg.levels - 1)
        if h % f or w % f:
            raise ValueError(f"spatial size {h}x{w} not divisible by {f}")
        tape = Tape(self.version)
        e = tape.entries
        windows = cfg.pool_windows()
        skips = []
        z = x
        for lvl in range(cfg.levels):
            for i in range(cfg.convs_per_level):
                name = f"enc{lvl}.conv{i}"
                z, e[name] = L.conv3d_forward(z, p[name + ".w"], p[name + ".b"])
                z, e[name + ".relu"] = L.relu_forward(z)
            if lvl < cfg.levels - 1:
                skips.append(z)
                z, e[f"pool{lvl}"] = L.maxpool3d_forward(z, windows[lvl])
        for lvl in reversed(range(cfg.levels - 1)):
            z, e[f"up{lvl}"] = L.upconv3d_forward(z, p[f"up{lvl}.w"], p[f"up{lvl}.b"])
            z, e[f"up{lvl}.relu"] = L.relu_forward(z)
            z, e[f"cat{lvl}"] = L.concat_forward(skips[lvl], z)
            for i in range(cfg.convs_per_level):
                name = f"dec{lvl}.conv{i}"
                z, e[name] = L.conv3d_forward(z, p[name + ".w"], p[name + ".b"])
                z, e[name + ".relu"] = L.relu_forward(z)
        residual, e["final"] = L.conv3d_forward(z, p["final.w"], p["final.b"])
        out, e["out.relu"] = L.relu_forward(x + residual)
        return (out[0] if squeeze else out), tape

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    # ------------------------------------------------------------------ backward

    def backward(self, tape: Tape, grad_out: np.ndarray):
        """Reverse pass; returns (parameter gradients, input gradient)."""
        if tape.consumed or tape.version != self.version:
            raise L.StaleTapeError("tape does not belong to the current parameters")
        tape.consumed = True
        cfg = self.config
        e = tape.entries
        grads: dict[str, np.ndarray] = {}
        g = grad_out.reshape((1, *grad_out.shape[-3:]))
        g = L.relu_backward(e["out.relu"], g)
        g_input = g.copy()
        g, grads["final.w"], grads["final.b"] = L.conv3d_backward(e["final"], g)
        skip_grads = {}
        for lvl in range(cfg.levels - 1):
            for i in reversed(range(cfg.convs_per_level)):
                name = f"dec{lvl}.conv{i}"
                g = L.relu_backward(e[name + ".relu"], g)
                g, grads[name + ".w"], grads[name + ".b"] = L.conv3d_backward(e[name], g)
            skip_grads[lvl], g = L.concat_backward(e[f"cat{lvl}"], g)
            g = L.relu_backward(e[f"up{lvl}.relu"], g)
            g, grads[f"up{lvl}.w"], grads[f"up{lvl}.b"] = L.upconv3d_backward(e[f"up{lvl}"], g)
        for lvl in reversed(range(cfg.levels)):
            if lvl < cfg.levels - 1:
                g = L.maxpool3d_backward(e[f"pool{lvl}"], g) + skip_grads[lvl]
            for i in reversed(range(cfg.convs_per_level)):
                name = f"enc{lvl}.conv{i}"
                g = L.relu_backward(e[name + ".relu"], g)
                g, grads[name + ".w"], grads[name + ".b"] = L.conv3d_backward(e[name], g)
        g_input = g_input + g
        return grads, g_input.reshape(grad_out.shape)


def unet_forward(net: UNet, aliased: np.ndarray) -> np.ndarray:
    """Inference on one cine (T, H, W); output is non-negative and the same shape."""
    return net(aliased)


def unet_forward_2d(net: UNet, frame: np.ndarray) -> np.ndarray:
    """Apply a per-frame (2D-kernel) network to one frame (H, W) or a stack (T, H, W)."""
    if not net.config.is_2d:
        raise ValueError("unet_forward_2d needs a network with 1x3x3 kernels")
    frames = frame[None] if frame.ndim == 2 else frame
    cfg1 = UNetConfig(**{**net.config.to_dict(), "frames": 1})
    single = UNet(cfg1, net.params) if frames.shape[0] != net.config.frames else net
    if single is net:
        out = net(frames)
    else:
        out = np.stack([single(f[None])[0] for f in frames])
    return out[0] if frame.ndim == 2 else out
