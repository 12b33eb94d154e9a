"""Set networks for the completion map and the potential, plus Adam.

Architecture: a shared per-point MLP (3 -> 64 -> 128) followed by a global
max-pool gives a permutation-invariant cloud feature; the map head emits
3 * n_out coordinates reshaped to an n_out-point cloud, the potential head
a single unconstrained real (no terminal squashing). ReLU everywhere
except the final head layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ContractError, NumericalError
from .geometry import PointCloud


@dataclass
class MLPParams:
    """Weight/bias stacks for a plain MLP; weights[i] is (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class SetEncoderParams:
    """Per-point feature MLP applied before the global max-pool."""

    point_mlp: MLPParams

    @property
    def feature_width(self) -> int:
        return self.point_mlp.weights[-1].shape[1]


@dataclass
class MapNetParams:
    encoder: SetEncoderParams
    head: MLPParams
    n_out: int

    def arrays(self) -> list[np.ndarray]:
        return self.encoder.point_mlp.arrays() + self.head.arrays()


@dataclass
class PotentialNetParams:
    encoder: SetEncoderParams
    head: MLPParams

    def arrays(self) -> list[np.ndarray]:
        return self.encoder.point_mlp.arrays() + self.head.arrays()


def _init_mlp(widths: list[int], rng: np.random.Generator) -> MLPParams:
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MLPParams(weights, biases)


def init_map_net(seed: int, n_out: int = 256, point_widths=(3, 64, 128),
                 head_widths=(128,)) -> MapNetParams:
    rng = np.random.default_rng(seed)
    encoder = SetEncoderParams(_init_mlp(list(point_widths), rng))
    head = _init_mlp([point_widths[-1], *head_widths, 3 * n_out], rng)
    return MapNetParams(encoder, head, n_out)


def init_potential_net(seed: int, point_widths=(3, 64, 128),
                       head_widths=(64,)) -> PotentialNetParams:
    rng = np.random.default_rng(seed)
    encoder = SetEncoderParams(_init_mlp(list(point_widths), rng))
    head = _init_mlp([point_widths[-1], *head_widths, 1], rng)
    return PotentialNetParams(encoder, head)


def make_leaves(tape: ad.Tape, params, trainable: bool) -> list[ad.Tensor]:
    """Tape leaves for every parameter array, in params.arrays() order."""
    return [ad.leaf(tape, a, requires_grad=trainable) for a in params.arrays()]


def _mlp_graph(x: ad.Tensor, leaves: list[ad.Tensor], n_layers: int,
               final_linear: bool, check_tag: str) -> ad.Tensor:
    h = x
    for i in range(n_layers):
        w, b = leaves[2 * i], leaves[2 * i + 1]
        h = ad.add(ad.matmul(h, w), b)
        if i < n_layers - 1 or not final_linear:
            h = ad.relu(h)
        if not np.all(np.isfinite(h.values)):
            raise NumericalError(f"non-finite activation in {check_tag} layer {i}")
    return h


def _encoder_graph(cloud, tape: ad.Tape,
                   leaves: list[ad.Tensor], n_point_layers: int) -> ad.Tensor:
    x = cloud if isinstance(cloud, ad.Tensor) else ad.leaf(tape, cloud, requires_grad=False)
    h = _mlp_graph(x, leaves[: 2 * n_point_layers], n_point_layers,
                   final_linear=False, check_tag="encoder")
    pooled = ad.reduce_max(h, axis=0)
    return ad.reshape(pooled, (1, pooled.shape[0]))


def forward_map(params: MapNetParams, cloud, tape: ad.Tape | None = None,
                leaves: list[ad.Tensor] | None = None, trainable: bool = True):
    """Run the completion map; returns (output Tensor (n_out, 3), tape, leaves)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    if tape is None:
        tape = ad.Tape()
    if leaves is None:
        leaves = make_leaves(tape, params, trainable)
    n_pt = len(params.encoder.point_mlp.weights)
    n_head = len(params.head.weights)
    feat = _encoder_graph(pts, tape, leaves, n_pt)
    out = _mlp_graph(feat, leaves[2 * n_pt:], n_head, final_linear=True,
                     check_tag="map head")
    out = ad.reshape(out, (params.n_out, 3))
    return out, tape, leaves


def forward_potential(params: PotentialNetParams, cloud, tape: ad.Tape | None = None,
                      leaves: list[ad.Tensor] | None = None, trainable: bool = True):
    """Evaluate the potential; returns (scalar Tensor, tape, leaves)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    if tape is None:
        tape = ad.Tape()
    if leaves is None:
        leaves = make_leaves(tape, params, trainable)
    n_pt = len(params.encoder.point_mlp.weights)
    n_head = len(params.head.weights)
    feat = _encoder_graph(pts, tape, leaves, n_pt)
    out = _mlp_graph(feat, leaves[2 * n_pt:], n_head, final_linear=True,
                     check_tag="potential head")
    return ad.reshape(out, ()), tape, leaves


def map_cloud(params: MapNetParams, cloud) -> PointCloud:
    """Inference wrapper: completed n_out-point cloud as a PointCloud."""
    out, _, _ = forward_map(params, cloud, trainable=False)
    label = cloud.class_label if isinstance(cloud, PointCloud) else None
    return PointCloud(out.values, class_label=label)


def potential_value(params: PotentialNetParams, cloud) -> float:
    out, _, _ = forward_potential(params, cloud, trainable=False)
    return float(out.values)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moments per parameter array plus step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-5
    beta1: float = 0.95
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @staticmethod
    def for_params(arrays: list[np.ndarray], lr: float = 1e-5,
                   beta1: float = 0.95, beta2: float = 0.999) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            lr=lr, beta1=beta1, beta2=beta2,
        )


def adam_step(state: AdamState, arrays: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update; mutates state, returns new arrays."""
    if len(arrays) != len(grads) or any(a.shape != g.shape for a, g in zip(arrays, grads)):
        raise ContractError("parameter/gradient shape mismatch")
    state.step += 1
    t = state.step
    out = []
    for i, (a, g) in enumerate(zip(arrays, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g**2
        m_hat = state.m[i] / (1 - state.beta1**t)
        v_hat = state.v[i] / (1 - state.beta2**t)
        out.append(a - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat))
    return out


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale the full gradient list so its global L2 norm is <= max_norm."""
    total = np.sqrt(sum(float((g**2).sum()) for g in grads))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return [g * factor for g in grads]


def set_arrays(params, arrays: list[np.ndarray]) -> None:
    """Write a flat array list back into a params container, in order."""
    expected = params.arrays()
    if len(expected) != len(arrays):
        raise ContractError("array count mismatch")
    it = iter(arrays)
    mlps = [params.encoder.point_mlp, params.head] if hasattr(params, "head") \
        else [params.point_mlp]
    for mlp in mlps:
        for i in range(len(mlp.weights)):
            mlp.weights[i] = next(it)
            mlp.biases[i] = next(it)


# ---------------------------------------------------------------------------
# Checkpoints: JSON manifest line + raw little-endian float64 payload.
# Deterministic bytes (no timestamps), bit-exact round-trip.


def write_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                     meta: dict | None = None) -> None:
    path = Path(path)
    names = list(arrays)
    manifest = {
        "arrays": [{"name": k, "shape": list(arrays[k].shape)} for k in names],
        "meta": meta or {},
    }
    payload = b"".join(
        np.ascontiguousarray(arrays[k], dtype="<f8").tobytes() for k in names
    )
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        fh.write(payload)
    tmp.replace(path)


def read_checkpoint(path: str | Path):
    path = Path(path)
    with path.open("rb") as fh:
        manifest = json.loads(fh.readline().decode())
        arrays = {}
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, manifest["meta"]


def map_net_to_arrays(params: MapNetParams, prefix: str = "T") -> dict[str, np.ndarray]:
    out = {}
    for i, a in enumerate(params.arrays()):
        out[f"{prefix}.{i:02d}"] = a
    return out


def map_net_from_arrays(arrays: dict[str, np.ndarray], template: MapNetParams,
                        prefix: str = "T") -> MapNetParams:
    flat = [arrays[f"{prefix}.{i:02d}"] for i in range(len(template.arrays()))]
    fresh = init_map_net(0, n_out=template.n_out,
                         point_widths=_mlp_widths(template.encoder.point_mlp),
                         head_widths=_mlp_widths(template.head)[1:-1])
    set_arrays(fresh, flat)
    return fresh


def potential_net_to_arrays(params: PotentialNetParams, prefix: str = "v") -> dict[str, np.ndarray]:
    return {f"{prefix}.{i:02d}": a for i, a in enumerate(params.arrays())}


def potential_net_from_arrays(arrays: dict[str, np.ndarray], template: PotentialNetParams,
                              prefix: str = "v") -> PotentialNetParams:
    flat = [arrays[f"{prefix}.{i:02d}"] for i in range(len(template.arrays()))]
    fresh = init_potential_net(0, point_widths=_mlp_widths(template.encoder.point_mlp),
                               head_widths=_mlp_widths(template.head)[1:-1])
    set_arrays(fresh, flat)
    return fresh


def _mlp_widths(mlp: MLPParams) -> tuple[int, ...]:
    widths = [mlp.weights[0].shape[0]]
    for w in mlp.weights:
        widths.append(w.shape[1])
    return tuple(widths)
