"""Two-stage enhancement network.

Stage I turns the framed waveform, noisy LPS and noisy RI into an IRM
estimate and an RI estimate through two gated branches of multi-scale
units.  Stage II maps (fused stage-I magnitude, noisy magnitude) to a
compressed a-priori SNR through a stack of multi-scale residual blocks.
All temporal convolutions are causal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import DimensionError
from .config import ModelConfig
from .nn import (
    BatchNormState,
    Conv1dSpec,
    Tensor,
    add,
    batchnorm_forward,
    channel_slice,
    concat,
    conv1d_forward,
    dropout_apply,
    init_conv,
    log_eps,
    mul,
    parameter,
    relu,
    sigmoid,
    sqrt_eps,
    square,
)

PARAMS_VERSION = "mtms-1"
RI_MAG_EPS = 1e-12
# FLOPs charged per element for pointwise ops (eval mode; BN folded to scale+shift)
POINTWISE_FLOPS = {"bn": 2, "relu": 1, "sigmoid": 4, "mul": 1, "add": 1, "log": 1}


def group_sizes(channels: int, groups: int) -> tuple[int, ...]:
    """Split ``channels`` into ``groups`` near-equal parts.

    Remainder channels go to the outermost groups first, alternating
    front and back: 161/4 -> (41, 40, 40, 40), 322/4 -> (81, 80, 80, 81).
    """
    if not 1 <= groups <= channels:
        raise DimensionError(f"cannot split {channels} channels into {groups} groups")
    base, rem = divmod(channels, groups)
    sizes = [base] * groups
    order = []
    lo, hi = 0, groups - 1
    while lo <= hi:
        order.append(lo)
        if hi != lo:
            order.append(hi)
        lo, hi = lo + 1, hi - 1
    for i in order[:rem]:
        sizes[i] += 1
    return tuple(sizes)


@dataclass(frozen=True)
class MultiScaleUnitSpec:
    channels: int
    num_groups: int
    dilation: int
    dropout_rate: float = 0.2

    @property
    def sizes(self) -> tuple[int, ...]:
        return group_sizes(self.channels, self.num_groups)


@dataclass(frozen=True)
class Layer:
    """One row of the layer table: a conv, a batch norm, or a pointwise op."""

    name: str
    kind: str  # conv | bn | relu | sigmoid | mul | add | log
    conv: Conv1dSpec | None = None
    channels: int = 0


def _msu_layers(prefix: str, spec: MultiScaleUnitSpec) -> list[Layer]:
    out = [
        Layer(f"{prefix}.g{i}", "conv", Conv1dSpec(c, c, 3, spec.dilation))
        for i, c in enumerate(spec.sizes)
    ]
    out += [
        Layer(f"{prefix}.bn", "bn", channels=spec.channels),
        Layer(f"{prefix}.relu", "relu", channels=spec.channels),
        Layer(f"{prefix}.res", "add", channels=spec.channels),
    ]
    return out


def _conv(name, cin, cout, k=1, d=1) -> Layer:
    return Layer(name, "conv", Conv1dSpec(cin, cout, k, d))


def stage1_layers(cfg: ModelConfig) -> list[Layer]:
    k, f, b = cfg.n_bins, cfg.frame_len, cfg.branch_channels
    tc, to = cfg.time_channels, cfg.time_out
    L = [
        Layer("s1.in_frames", "bn", channels=f),
        Layer("s1.in_lps", "bn", channels=k),
        Layer("s1.in_ri", "bn", channels=2 * k),
        _conv("s1.t1", f, tc, 3, 1), Layer("s1.t1_bn", "bn", channels=tc), Layer("s1.t1_relu", "relu", channels=tc),
        _conv("s1.t2", tc, to, 3, 3), Layer("s1.t2_bn", "bn", channels=to), Layer("s1.t2_relu", "relu", channels=to),
        _conv("s1.t3", to, to, 3, 5), Layer("s1.t3_bn", "bn", channels=to), Layer("s1.t3_relu", "relu", channels=to),
        _conv("s1.t4", to, to, 1, 1),
        _conv("s1.fuse", to + 3 * k, cfg.fusion_channels),
        Layer("s1.fuse_bn", "bn", channels=cfg.fusion_channels),
        Layer("s1.fuse_relu", "relu", channels=cfg.fusion_channels),
        _conv("s1.irm_in", cfg.fusion_channels, b),
        _conv("s1.ri_in", cfg.fusion_channels, 2 * b),
    ]
    for u, d in enumerate(cfg.unit_dilations):
        L.append(_conv(f"s1.u{u}.irm_skip", b + k, b))
        L.append(_conv(f"s1.u{u}.ri_skip", 2 * b + 2 * k, 2 * b))
        L += _msu_layers(f"s1.u{u}.irm", MultiScaleUnitSpec(b, cfg.irm_groups, d, cfg.dropout))
        L += _msu_layers(f"s1.u{u}.ri", MultiScaleUnitSpec(2 * b, cfg.ri_groups, d, cfg.dropout))
        L.append(_conv(f"s1.u{u}.gate", b, b))
        L.append(Layer(f"s1.u{u}.gate_sig", "sigmoid", channels=b))
        L.append(Layer(f"s1.u{u}.gate_mul", "mul", channels=2 * b))
    L += [
        _conv("s1.irm_head", b + k, k),
        Layer("s1.irm_sig", "sigmoid", channels=k),
        _conv("s1.ri_head", 2 * b + 2 * k, 2 * k),
    ]
    return L


def stage2_layers(cfg: ModelConfig) -> list[Layer]:
    k, w, n = cfg.n_bins, cfg.s2_wide, cfg.s2_narrow
    L = [
        Layer("s2.in_log", "log", channels=2 * k),
        Layer("s2.in_norm", "bn", channels=2 * k),
        _conv("s2.in_proj", 2 * k, n),
    ]
    for i, d in enumerate(cfg.block_dilations):
        cin = 2 * k if i == 0 else n
        L += [
            _conv(f"s2.b{i}.wide", cin, w),
            Layer(f"s2.b{i}.wide_bn", "bn", channels=w),
            Layer(f"s2.b{i}.wide_relu", "relu", channels=w),
        ]
        L += _msu_layers(f"s2.b{i}.ms", MultiScaleUnitSpec(w, cfg.s2_groups, d, cfg.dropout))
        L += [_conv(f"s2.b{i}.narrow", w, n), Layer(f"s2.b{i}.res", "add", channels=n)]
    L += [_conv("s2.head", n, k), Layer("s2.head_sig", "sigmoid", channels=k)]
    return L


def fusion_layers(cfg: ModelConfig) -> list[Layer]:
    """Pointwise work joining the stages: masked magnitude, RI magnitude, average."""
    k = cfg.n_bins
    return [
        Layer("fuse.mask_mul", "mul", channels=k),
        Layer("fuse.ri_sq", "mul", channels=2 * k),
        Layer("fuse.ri_sum", "add", channels=k),
        Layer("fuse.avg", "add", channels=2 * k),
    ]


def layer_table(cfg: ModelConfig) -> list[Layer]:
    return stage1_layers(cfg) + fusion_layers(cfg) + stage2_layers(cfg)


@dataclass
class ModelParams:
    """Named arrays for both stages. BN running statistics are buffers, not parameters."""

    tensors: dict[str, np.ndarray]
    trainable: tuple[str, ...]
    version: str = PARAMS_VERSION
    seed: int = 0

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.tensors.items())

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.trainable, self.version, self.seed)


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    trainable = []
    for layer in layer_table(cfg):
        if layer.kind == "conv":
            for key, arr in init_conv(layer.conv, rng).items():
                tensors[f"{layer.name}.{key}"] = arr
                trainable.append(f"{layer.name}.{key}")
        elif layer.kind == "bn":
            c = layer.channels
            tensors[f"{layer.name}.gamma"] = np.ones(c)
            tensors[f"{layer.name}.beta"] = np.zeros(c)
            trainable += [f"{layer.name}.gamma", f"{layer.name}.beta"]
            tensors[f"{layer.name}.running_mean"] = np.zeros(c)
            tensors[f"{layer.name}.running_var"] = np.ones(c)
    return ModelParams(tensors, tuple(trainable), PARAMS_VERSION, seed)


def count_params(params: ModelParams) -> int:
    return int(sum(params.tensors[name].size for name in params.trainable))


def count_flops_per_frame(cfg: ModelConfig) -> int:
    """FLOPs for one output frame: 2 per multiply-accumulate plus bias adds, plus pointwise ops."""
    total = 0
    for layer in layer_table(cfg):
        if layer.kind == "conv":
            total += layer.conv.flops_per_frame
        else:
            total += POINTWISE_FLOPS[layer.kind] * layer.channels
    return total


def _as_btc(x, channels: int, what: str) -> Tensor:
    """(T, C) numpy or (1, C, T) Tensor -> (1, C, T) Tensor."""
    if isinstance(x, Tensor):
        t = x
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"{what} must be (T, {channels}), got {arr.shape}")
        t = Tensor(arr.T[None, :, :].copy())
    if t.shape[1] != channels:
        raise DimensionError(f"{what} must have {channels} channels, got {t.shape[1]}")
    return t


@dataclass
class StageOneOutput:
    irm_hat: Tensor
    ri_hat: Tensor
    trace: dict[str, Tensor] = field(default_factory=dict)


class MTMSNet:
    """Forward passes over a :class:`ModelParams` store.

    ``bind(trainable=True)`` wraps parameters as gradient-tracking leaves
    that share memory with the store, so optimizer updates in place are
    seen by the next forward pass.
    """

    def __init__(self, cfg: ModelConfig, params: ModelParams | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        self._leaves: dict[str, Tensor] = {}
        self.bind(False)

    def bind(self, trainable: bool) -> dict[str, Tensor]:
        make = parameter if trainable else Tensor
        self._leaves = {name: make(self.params.tensors[name]) for name in self.params.trainable}
        for name, leaf in self._leaves.items():
            # share memory with the store even if asarray would have copied
            leaf.data = self.params.tensors[name]
        return self._leaves

    def leaf(self, name: str) -> Tensor:
        return self._leaves[name]

    # -- building blocks -------------------------------------------------------

    def _conv(self, name: str, x: Tensor, k: int = 1, d: int = 1) -> Tensor:
        w = self._leaves[f"{name}.weight"]
        spec = Conv1dSpec(w.shape[1], w.shape[0], k, d)
        return conv1d_forward(x, spec, w, self._leaves.get(f"{name}.bias"))

    def _bn(self, name: str, x: Tensor, training: bool) -> Tensor:
        p = self.params.tensors
        state = BatchNormState(p[f"{name}.running_mean"], p[f"{name}.running_var"],
                               self.cfg.bn_momentum, self.cfg.bn_eps)
        return batchnorm_forward(x, state, self._leaves[f"{name}.gamma"], self._leaves[f"{name}.beta"], training)

    def multi_scale_unit(self, prefix: str, x: Tensor, spec: MultiScaleUnitSpec,
                         training: bool, rng) -> Tensor:
        """Grouped sub-band dilated convs, concat, BN, ReLU, dropout, plus the unit input."""
        if x.shape[1] != spec.channels:
            raise DimensionError(f"{prefix}: expected {spec.channels} channels, got {x.shape[1]}")
        parts = []
        start = 0
        for i, c in enumerate(spec.sizes):
            xi = channel_slice(x, start, start + c) if spec.num_groups > 1 else x
            parts.append(self._conv(f"{prefix}.g{i}", xi, 3, spec.dilation))
            start += c
        y = concat(parts) if len(parts) > 1 else parts[0]
        y = relu(self._bn(f"{prefix}.bn", y, training))
        y = dropout_apply(y, spec.dropout_rate, training, rng)
        return add(y, x)

    # -- stage I ------------------------------------------------------------------

    def stage1(self, frames, lps, ri, training: bool = False, rng=None,
               trace: bool = False, gate_override: dict[int, np.ndarray] | None = None) -> StageOneOutput:
        cfg = self.cfg
        k, b = cfg.n_bins, cfg.branch_channels
        fr = _as_btc(frames, cfg.frame_len, "frames")
        lp = _as_btc(lps, k, "lps")
        r_in = _as_btc(ri, 2 * k, "ri")
        if not (fr.shape[2] == lp.shape[2] == r_in.shape[2]):
            raise DimensionError(f"frame counts differ: {fr.shape[2]}, {lp.shape[2]}, {r_in.shape[2]}")
        tr: dict[str, Tensor] = {}

        fr = self._bn("s1.in_frames", fr, training)
        lp = self._bn("s1.in_lps", lp, training)
        r_in = self._bn("s1.in_ri", r_in, training)

        h = relu(self._bn("s1.t1_bn", self._conv("s1.t1", fr, 3, 1), training))
        h = relu(self._bn("s1.t2_bn", self._conv("s1.t2", h, 3, 3), training))
        h = relu(self._bn("s1.t3_bn", self._conv("s1.t3", h, 3, 5), training))
        h = self._conv("s1.t4", h)
        fused = relu(self._bn("s1.fuse_bn", self._conv("s1.fuse", concat([h, lp, r_in])), training))

        m = self._conv("s1.irm_in", fused)
        r = self._conv("s1.ri_in", fused)
        for u, d in enumerate(cfg.unit_dilations):
            m = self._conv(f"s1.u{u}.irm_skip", concat([m, lp]))
            r = self._conv(f"s1.u{u}.ri_skip", concat([r, r_in]))
            m = self.multi_scale_unit(f"s1.u{u}.irm", m, MultiScaleUnitSpec(b, cfg.irm_groups, d, cfg.dropout),
                                      training, rng)
            r = self.multi_scale_unit(f"s1.u{u}.ri", r, MultiScaleUnitSpec(2 * b, cfg.ri_groups, d, cfg.dropout),
                                      training, rng)
            gate = sigmoid(self._conv(f"s1.u{u}.gate", m))
            if gate_override is not None and u in gate_override:
                gate = Tensor(np.broadcast_to(gate_override[u], gate.shape).copy())
            r = mul(r, concat([gate, gate]))
            if trace:
                tr[f"gate{u}"] = gate
                tr[f"ri_gated{u}"] = r
        irm_hat = sigmoid(self._conv("s1.irm_head", concat([m, lp])))
        ri_hat = self._conv("s1.ri_head", concat([r, r_in]))
        return StageOneOutput(irm_hat, ri_hat, tr)

    # -- bridge -----------------------------------------------------------------

    def stage1_magnitude(self, out: StageOneOutput, noisy_lps) -> Tensor:
        """Average of the masked magnitude and the RI magnitude, kept in the graph."""
        k = self.cfg.n_bins
        noisy_mag = np.sqrt(np.exp(_as_btc(noisy_lps, k, "lps").data))
        masked = mul(out.irm_hat, noisy_mag)
        re = channel_slice(out.ri_hat, 0, k)
        im = channel_slice(out.ri_hat, k, 2 * k)
        mag_ri = sqrt_eps(add(square(re), square(im)), RI_MAG_EPS)
        return mul(add(mag_ri, masked), 0.5)

    # -- stage II -----------------------------------------------------------------

    def stage2(self, avg_mag, noisy_mag, training: bool = False, rng=None) -> Tensor:
        cfg = self.cfg
        k = cfg.n_bins
        a = _as_btc(avg_mag, k, "avg_mag")
        n = _as_btc(noisy_mag, k, "noisy_mag")
        if a.shape[2] != n.shape[2]:
            raise DimensionError(f"frame counts differ: {a.shape[2]} vs {n.shape[2]}")
        x = log_eps(concat([a, n]), cfg.s2_log_floor)
        x = self._bn("s2.in_norm", x, training)
        res = self._conv("s2.in_proj", x)
        for i, d in enumerate(cfg.block_dilations):
            h = relu(self._bn(f"s2.b{i}.wide_bn", self._conv(f"s2.b{i}.wide", x), training))
            h = self.multi_scale_unit(f"s2.b{i}.ms", h, MultiScaleUnitSpec(cfg.s2_wide, cfg.s2_groups, d, cfg.dropout),
                                      training, rng)
            x = add(self._conv(f"s2.b{i}.narrow", h), res)
            res = x
        return sigmoid(self._conv("s2.head", x))

    # -- whole model ----------------------------------------------------------------

    def forward(self, frames, lps, ri, training: bool = False, rng=None,
                detach: bool | None = None, noisy_only: bool = False):
        """Both stages; returns (stage-I output, stage-II input magnitude, compressed SNR estimate)."""
        s1 = self.stage1(frames, lps, ri, training, rng)
        noisy_mag = np.sqrt(np.exp(_as_btc(lps, self.cfg.n_bins, "lps").data))
        if noisy_only:
            avg = Tensor(noisy_mag)
        else:
            avg = self.stage1_magnitude(s1, lps)
            if self.cfg.detach_stage2 if detach is None else detach:
                avg = Tensor(avg.data)
        xibar = self.stage2(avg, Tensor(noisy_mag), training, rng)
        return s1, avg, xibar


def to_tk(t: Tensor) -> np.ndarray:
    """(1, C, T) tensor -> (T, C) array."""
    return t.data[0].T.copy()
