"""Heterogeneous graph network over (vehicle, lane, connection, phase) nodes.

One propagation kernel serves every edge type: messages concatenate the source
embedding (plus the source lane's raw length feature where the source is a
lane) with the edge features, pass through a per-edge-type, per-layer linear
map, are sum-aggregated into targets with no degree normalization and no
self-loop, then ReLU. Forward code is written against an ops interface so the
same functions run on raw numpy (planning) or on the differentiation tape
(training).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .connectivity import ControllerSnapshot, advance_snapshot, connection_features
from .tape import Node, Tape, scatter_add_rows


class NumpyOps:
    """Tape-free twin of the Tape primitives, for planning-time evaluation."""

    @staticmethod
    def linear(parts, W, b=None):
        X = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
        y = X @ W.T
        return y + b if b is not None else y

    @staticmethod
    def noisy_linear(parts, W_mu, W_sig, eps_w, b_mu, b_sig, eps_b):
        W = W_mu + W_sig * eps_w
        b = b_mu + b_sig * eps_b
        X = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
        return X @ W.T + b

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def gather(x, idx):
        return x[idx]

    @staticmethod
    def segment_sum(x, idx, n):
        return scatter_add_rows(x, idx, n)

    @staticmethod
    def sum_all(x):
        return float(x.sum())


NUMPY_OPS = NumpyOps()


class TapeOps:
    """Adapter exposing the same surface as NumpyOps but recording to a tape."""

    def __init__(self, tape: Tape):
        self.tape = tape

    def linear(self, parts, W, b=None):
        return self.tape.linear(parts, W, b)

    def noisy_linear(self, parts, W_mu, W_sig, eps_w, b_mu, b_sig, eps_b):
        return self.tape.noisy_linear(parts, W_mu, W_sig, eps_w, b_mu, b_sig, eps_b)

    def relu(self, x):
        return self.tape.relu(x)

    def gather(self, x, idx):
        return self.tape.gather(x, idx)

    def segment_sum(self, x, idx, n):
        return self.tape.segment_sum(x, idx, n)

    def sum_all(self, x):
        return self.tape.sum_all(x)


class ParamAccess:
    """Name -> tensor lookup; the tape variant materializes leaves on demand."""

    def __init__(self, params: "ModelParams", tape: Optional[Tape] = None):
        self.params = params
        self.tape = tape
        self._leaves: dict[str, Node] = {}

    def __getitem__(self, name: str):
        if self.tape is None:
            return self.params.tensors[name]
        if name not in self._leaves:
            self._leaves[name] = self.tape.leaf(self.params.tensors[name], name)
        return self._leaves[name]


@dataclass
class ModelParams:
    d: int
    K: int
    Kp: int
    hidden: int
    noisy: bool
    tensors: dict[str, np.ndarray]
    noise: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.d,
            self.K,
            self.Kp,
            self.hidden,
            self.noisy,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.noise.items()},
        )


N_VEH_FEAT = 2
N_LANE_FEAT = 1
N_CONN_FEAT = 8
N_LL_EDGE_FEAT = 1 + N_CONN_FEAT
N_CP_EDGE_FEAT = 2

NOISY_HEADS = ("phi", "q")


def _plain(rng, shape):
    fan_in = shape[1]
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


def init_params(
    rng: np.random.Generator,
    d: int = 32,
    K: int = 3,
    Kp: int = 3,
    hidden: int = 32,
    noisy: bool = True,
    q_head: bool = False,
) -> ModelParams:
    t: dict[str, np.ndarray] = {}
    t["vl.W"] = _plain(rng, (d, N_VEH_FEAT))
    msg_in = d + N_LANE_FEAT + N_LL_EDGE_FEAT
    for k in range(K):
        t[f"rep{k}.W"] = _plain(rng, (d, msg_in))
    for k in range(Kp):
        t[f"dyn{k}.W"] = _plain(rng, (d, msg_in))
    t["lc.W"] = _plain(rng, (d, msg_in))
    t["cp.W"] = _plain(rng, (d, d + N_CP_EDGE_FEAT))
    for head in ("val", "rew"):
        t[f"{head}.W1"] = _plain(rng, (hidden, d))
        t[f"{head}.b1"] = np.zeros(hidden)
        t[f"{head}.W2"] = _plain(rng, (1, hidden))
        t[f"{head}.b2"] = np.zeros(1)
    heads = ["phi"] + (["q"] if q_head else [])
    sigma0 = 0.5 if noisy else 0.0
    for head in heads:
        for name, shape in ((f"{head}.W1", (hidden, d)), (f"{head}.W2", (1, hidden))):
            fan_in = shape[1]
            bound = 1.0 / np.sqrt(fan_in)
            t[f"{name}_mu"] = rng.uniform(-bound, bound, size=shape)
            t[f"{name}_sig"] = np.full(shape, sigma0 / np.sqrt(fan_in))
            t[f"{name.replace('W', 'b')}_mu"] = rng.uniform(-bound, bound, size=shape[0])
            t[f"{name.replace('W', 'b')}_sig"] = np.full(shape[0], sigma0 / np.sqrt(fan_in))
    params = ModelParams(d, K, Kp, hidden, noisy, t)
    zero_noise(params)
    return params


def _noise_transform(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.sqrt(np.abs(x))


def resample_noise(params: ModelParams, rng: np.random.Generator):
    """Fresh factored-Gaussian realizations for the noisy heads, in place."""
    if not params.noisy:
        zero_noise(params)
        return
    for head in NOISY_HEADS:
        if f"{head}.W1_mu" not in params.tensors:
            continue
        for layer in ("W1", "W2"):
            shape = params.tensors[f"{head}.{layer}_mu"].shape
            e_out = _noise_transform(rng.normal(size=shape[0]))
            e_in = _noise_transform(rng.normal(size=shape[1]))
            params.noise[f"{head}.{layer}_eps"] = np.outer(e_out, e_in)
            params.noise[f"{head}.{layer.replace('W', 'b')}_eps"] = e_out


def zero_noise(params: ModelParams):
    for head in NOISY_HEADS:
        if f"{head}.W1_mu" not in params.tensors:
            continue
        for layer in ("W1", "W2"):
            shape = params.tensors[f"{head}.{layer}_mu"].shape
            params.noise[f"{head}.{layer}_eps"] = np.zeros(shape)
            params.noise[f"{head}.{layer.replace('W', 'b')}_eps"] = np.zeros(shape[0])


@dataclass
class LatentState:
    emb: Union[np.ndarray, Node]  # (n_lanes, d)
    snapshot: ControllerSnapshot
    conn_feat: np.ndarray  # (n_connections, 8)
    graph: "GraphIndex"


@dataclass
class LocalPrior:
    intersection: str
    phase_ids: list[int]  # legal phases, cycle order
    global_idx: np.ndarray  # rows into the global phase logits
    probs: np.ndarray


def _ll_round(ops, h, W, edge, g):
    src = ops.gather(h, g.ll_src)
    msg = ops.linear([src, g.ll_src_feat, edge], W)
    return ops.relu(ops.segment_sum(msg, g.ll_dst, g.n_lane))


def initial_representation(params, obs, ops=NUMPY_OPS, pv=None) -> LatentState:
    """One vehicle-to-lane round, then K lane-to-lane rounds."""
    pv = pv if pv is not None else ParamAccess(params)
    g = obs.graph
    msg = ops.linear([obs.veh_feat], pv["vl.W"])
    h = ops.relu(ops.segment_sum(msg, obs.veh_lane, g.n_lane))
    edge = g.ll_edge(obs.conn_feat)
    for k in range(params.K):
        h = _ll_round(ops, h, pv[f"rep{k}.W"], edge, g)
    return LatentState(h, obs.snapshot, obs.conn_feat, g)


def dynamics_step(params, latent: LatentState, action: dict[str, int], ops=NUMPY_OPS, pv=None) -> LatentState:
    """Manual connectivity rollforward, then K' learned lane-to-lane rounds."""
    pv = pv if pv is not None else ParamAccess(params)
    snap = advance_snapshot(latent.snapshot, action)
    conn_feat = connection_features(snap)
    h = latent.emb
    g = latent.graph
    edge = g.ll_edge(conn_feat)
    for k in range(params.Kp):
        h = _ll_round(ops, h, pv[f"dyn{k}.W"], edge, g)
    return LatentState(h, snap, conn_feat, g)


def _mlp_head(ops, pv, prefix, x):
    h = ops.relu(ops.linear([x], pv[f"{prefix}.W1"], pv[f"{prefix}.b1"]))
    return ops.linear([h], pv[f"{prefix}.W2"], pv[f"{prefix}.b2"])


def _noisy_head(ops, pv, params, prefix, x):
    noise = params.noise
    h = ops.relu(
        ops.noisy_linear(
            [x],
            pv[f"{prefix}.W1_mu"], pv[f"{prefix}.W1_sig"], noise[f"{prefix}.W1_eps"],
            pv[f"{prefix}.b1_mu"], pv[f"{prefix}.b1_sig"], noise[f"{prefix}.b1_eps"],
        )
    )
    return ops.noisy_linear(
        [h],
        pv[f"{prefix}.W2_mu"], pv[f"{prefix}.W2_sig"], noise[f"{prefix}.W2_eps"],
        pv[f"{prefix}.b2_mu"], pv[f"{prefix}.b2_sig"], noise[f"{prefix}.b2_eps"],
    )


def predict_value_reward(params, latent: LatentState, ops=NUMPY_OPS, pv=None):
    """(reward, value) per lane plus exact network totals."""
    pv = pv if pv is not None else ParamAccess(params)
    r_lane = _mlp_head(ops, pv, "rew", latent.emb)
    v_lane = _mlp_head(ops, pv, "val", latent.emb)
    return r_lane, v_lane, ops.sum_all(r_lane), ops.sum_all(v_lane)


def phase_logits(params, latent: LatentState, legal_mask: np.ndarray, ops=NUMPY_OPS, pv=None, head: str = "phi"):
    """Lane-to-connection and connection-to-phase rounds, then the noisy head."""
    pv = pv if pv is not None else ParamAccess(params)
    g = latent.graph
    src = ops.gather(latent.emb, g.lc_src)
    edge = np.concatenate([g.lc_inbound, latent.conn_feat[g.lc_conn]], axis=1)
    conn_emb = ops.relu(
        ops.segment_sum(
            ops.linear([src, g.lc_src_feat, edge], pv["lc.W"]),
            g.lc_dst,
            g.n_conn,
        )
    )
    cp_feat = np.concatenate(
        [g.cp_opens, legal_mask[g.cp_dst].astype(float)[:, None]], axis=1
    )
    phase_emb = ops.relu(
        ops.segment_sum(
            ops.linear([ops.gather(conn_emb, g.cp_src), cp_feat], pv["cp.W"]),
            g.cp_dst,
            g.n_phase,
        )
    )
    return _noisy_head(ops, pv, params, head, phase_emb)  # (n_phase, 1)


def predict_priors(params, latent: LatentState, ops=NUMPY_OPS, pv=None) -> list[LocalPrior]:
    """Per-intersection softmax over the legal phases (numpy path only)."""
    snap = latent.snapshot
    t = snap.tables
    legal = snap.legal_mask()
    logits = phase_logits(params, latent, legal, ops, pv)
    logits = logits if isinstance(logits, np.ndarray) else logits.value
    out = []
    for i, name in enumerate(t.net.intersections):
        ids = snap.legal_phase_ids(i)
        gidx = np.array([t.global_phase_index[pid] for pid in ids])
        z = logits[gidx, 0]
        z = z - z.max()
        e = np.exp(z)
        out.append(LocalPrior(name, ids, gidx, e / e.sum()))
    return out
