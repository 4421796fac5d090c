"""Social-attention graph Q-network with a dueling head.

Per state the graph has one node per agent (robot first). Agents are
embedded to a common width, passed through two attention layers in which
every node attends to every node including itself, and the robot node's
features from all three stages are summed into a fixed-width
representation that feeds the value and advantage streams.

All functions work on batches: robot inputs ``(B, 9)``, pedestrian inputs
``(B, N, 5)``, with one ``N`` per batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .autograd import F, Tensor
from .autograd.tensor import ShapeError
from .sim.state import PED_DIM, ROBOT_CENTRIC, ROBOT_DIM, JointState

Params = Mapping[str, Tensor]

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class NetworkDims:
    robot_in: int = ROBOT_DIM
    ped_in: int = PED_DIM
    embed_hidden: int = 64
    feature: int = 32
    attention: int = 32
    layers: int = 2
    common_hidden: int = 128
    n_actions: int = 81


@dataclass
class NetOutput:
    q: Tensor
    value: Tensor
    advantage: Tensor
    representation: Tensor
    node_features: list[Tensor]
    attention: list[np.ndarray]


def layer_shapes(dims: NetworkDims) -> list[tuple[str, int, int]]:
    """``(name, fan_in, fan_out)`` for every affine layer, in parameter order."""
    d = dims
    shapes = [
        ("robot_embed.0", d.robot_in, d.embed_hidden),
        ("robot_embed.1", d.embed_hidden, d.feature),
        ("ped_embed.0", d.ped_in, d.embed_hidden),
        ("ped_embed.1", d.embed_hidden, d.feature),
    ]
    for layer in range(d.layers):
        shapes += [
            (f"gat{layer}.query", d.feature, d.attention),
            (f"gat{layer}.key", d.feature, d.attention),
            (f"gat{layer}.attn", 2 * d.attention, 1),
        ]
    shapes += [
        ("common.0", d.feature, d.common_hidden),
        ("common.1", d.common_hidden, d.common_hidden),
        ("value", d.common_hidden, 1),
        ("advantage", d.common_hidden, d.n_actions),
    ]
    return shapes


def init_params(dims: NetworkDims, rng: np.random.Generator) -> dict[str, Tensor]:
    """Weights and biases uniform in +-1/sqrt(fan_in)."""
    params: dict[str, Tensor] = {}
    for name, fan_in, fan_out in layer_shapes(dims):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)),
                                          requires_grad=True, name=f"{name}.weight")
        params[f"{name}.bias"] = Tensor(rng.uniform(-bound, bound, fan_out),
                                        requires_grad=True, name=f"{name}.bias")
    return params


def count_params(dims: NetworkDims) -> int:
    return sum((fi + 1) * fo for _, fi, fo in layer_shapes(dims))


def _affine(x: Tensor, params: Params, name: str) -> Tensor:
    return F.linear(x, params[f"{name}.weight"], params[f"{name}.bias"])


def _mlp(x: Tensor, params: Params, prefix: str, n_layers: int) -> Tensor:
    for i in range(n_layers):
        x = F.relu(_affine(x, params, f"{prefix}.{i}"))
    return x


def embed_agents(robot: Tensor, peds: Tensor, params: Params) -> Tensor:
    """Node features ``(B, N + 1, feature)`` with the robot as node 0."""
    w_r = params["robot_embed.0.weight"].shape[0]
    w_p = params["ped_embed.0.weight"].shape[0]
    if robot.data.ndim != 2 or robot.shape[-1] != w_r:
        raise ShapeError(f"robot input must be (B, {w_r}), got {robot.shape}")
    if peds.data.ndim != 3 or peds.shape[-1] != w_p or peds.shape[0] != robot.shape[0]:
        raise ShapeError(f"pedestrian input must be (B, N, {w_p}), got {peds.shape}")
    batch = robot.shape[0]
    h_robot = _mlp(robot, params, "robot_embed", 2)
    h_robot = F.reshape(h_robot, (batch, 1, h_robot.shape[-1]))
    if peds.shape[1] == 0:
        return h_robot
    h_peds = _mlp(peds, params, "ped_embed", 2)
    return F.concat([h_robot, h_peds], axis=1)


def gat_layer(h: Tensor, params: Params, layer: int) -> tuple[Tensor, Tensor]:
    """One social-attention layer; returns new node features and the attention matrix.

    ``e_ij = LeakyReLU(a([q_i, k_j]))`` with a single affine ``a``; its
    weight is split into query and key halves so the concatenation never
    has to be materialised for every pair.
    """
    batch, n, _ = h.shape
    q = F.relu(_affine(h, params, f"gat{layer}.query"))
    k = F.relu(_affine(h, params, f"gat{layer}.key"))
    a_w = params[f"gat{layer}.attn.weight"]
    half = a_w.shape[0] // 2
    a_q = F.take(a_w, np.arange(half), axis=0)
    a_k = F.take(a_w, np.arange(half, 2 * half), axis=0)
    s = F.reshape(F.linear(q, a_q, params[f"gat{layer}.attn.bias"]), (batch, n))
    t = F.reshape(F.matmul(k, a_k), (batch, n))
    e = F.leaky_relu(F.pairwise_sum(s, t), LEAKY_SLOPE)
    alpha = F.softmax(e, axis=-1)
    return F.relu(F.matmul(alpha, h)), alpha


def graph_representation(robot: Tensor, peds: Tensor, params: Params,
                         n_layers: int = 2) -> tuple[Tensor, list[Tensor], list[np.ndarray]]:
    """Sum of the robot node's features over the embedding and every attention layer."""
    h = embed_agents(robot, peds, params)
    features = [h]
    attention = []
    for layer in range(n_layers):
        h, alpha = gat_layer(h, params, layer)
        features.append(h)
        attention.append(alpha.data)
    rep = F.take(features[0], 0, axis=1)
    for f in features[1:]:
        rep = F.add(rep, F.take(f, 0, axis=1))
    return rep, features, attention


def q_values(rep: Tensor, params: Params) -> tuple[Tensor, Tensor, Tensor]:
    """Dueling head: ``Q = V + D`` (no mean subtraction). Returns ``(Q, V, D)``."""
    c = _mlp(rep, params, "common", 2)
    value = _affine(c, params, "value")
    adv = _affine(c, params, "advantage")
    q = F.add(F.broadcast_to(value, adv.shape), adv)
    return q, value, adv


def batch_arrays(states: Sequence[JointState]) -> tuple[np.ndarray, np.ndarray]:
    """Stack robot-centric states with a common crowd size into network inputs."""
    if not states:
        raise ValueError("empty batch")
    n = states[0].n_peds
    for s in states:
        if s.frame != ROBOT_CENTRIC:
            raise ValueError("network inputs must be robot-centric states")
        if s.n_peds != n:
            raise ValueError(f"mixed crowd sizes in one batch: {n} and {s.n_peds}")
    robot = np.stack([s.robot_vec for s in states])
    peds = np.stack([s.peds for s in states]).reshape(len(states), n, PED_DIM)
    return robot, peds


class SocialGraphQNet:
    """Parameter container plus forward pass."""

    def __init__(self, dims: NetworkDims = NetworkDims(), seed: int | np.random.Generator = 0,
                 params: dict[str, Tensor] | None = None):
        self.dims = dims
        if params is None:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            params = init_params(dims, rng)
        self.params = params

    def forward_arrays(self, robot: np.ndarray, peds: np.ndarray) -> NetOutput:
        rep, feats, attn = graph_representation(Tensor(robot), Tensor(peds), self.params,
                                                self.dims.layers)
        q, v, d = q_values(rep, self.params)
        return NetOutput(q, v, d, rep, feats, attn)

    def forward(self, states: JointState | Sequence[JointState]) -> NetOutput:
        if isinstance(states, JointState):
            states = [states]
        return self.forward_arrays(*batch_arrays(states))

    def q(self, state: JointState) -> np.ndarray:
        """81 action values for a single state."""
        return self.forward_arrays(state.robot_vec[None, :],
                                   state.peds[None, :, :]).q.data[0]

    def q_batch(self, states: Sequence[JointState]) -> np.ndarray:
        """Action values for states of any mix of crowd sizes, in input order."""
        out = np.empty((len(states), self.dims.n_actions))
        for n, idx in group_by_crowd_size(states).items():
            out[idx] = self.forward([states[i] for i in idx]).q.data
        return out

    # --- parameter management ---

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter names differ: missing={sorted(missing)}, "
                             f"unexpected={sorted(extra)}")
        for name, p in self.params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ValueError(f"shape mismatch for parameter {name!r}: "
                                 f"checkpoint {value.shape}, network {p.data.shape}")
        for name, p in self.params.items():
            p.data = np.array(arrays[name], dtype=np.float64)

    def copy(self) -> "SocialGraphQNet":
        params = {k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in self.params.items()}
        return SocialGraphQNet(self.dims, params=params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def parameters(self) -> Iterable[Tensor]:
        return self.params.values()


def group_by_crowd_size(states: Sequence[JointState]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(states):
        groups.setdefault(s.n_peds, []).append(i)
    return groups


def attention_rows(attention: Sequence[np.ndarray], index: int = 0) -> list[tuple[int, int, float, int]]:
    """``(from_agent, to_agent, weight, layer)`` rows for one state of a batch."""
    rows = []
    for layer, alpha in enumerate(attention, start=1):
        mat = alpha[index]
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                rows.append((i, j, float(mat[i, j]), layer))
    return rows
