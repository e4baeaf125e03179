"""Episode collection, replay with reanalyze, loss construction, training loop."""

from __future__ import annotations

import csv
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .checkpoint import save_params
from .connectivity import ControllerSnapshot, get_tables
from .graphobs import GraphObservation, encode_observation, observation_from_snapshot
from .model import (
    ModelParams,
    ParamAccess,
    dynamics_step,
    init_params,
    initial_representation,
    phase_logits,
    predict_value_reward,
    resample_noise,
    zero_noise,
)
from .netmodel import ACYCLIC, CYCLIC, RoadNetwork, fresh_trip_process, generate_trips
from .planner import (
    LocalTarget,
    SearchConfig,
    plan_from_obs,
    plan_independent_from_obs,
)
from .sim import TrafficSim
from .tape import Tape
from .model import TapeOps


@dataclass
class HyperParams:
    lr: float = 1e-3
    batch_size: int = 16
    gamma: float = 0.997
    K: int = 3
    Kp: int = 3
    delta: int = 1
    beta: int = 50
    c1: float = 5.0
    c2: float = 0.5
    c3: float = 0.5
    c_base: float = 19652.0
    c_init: float = 1.25
    patience: int = 10_000  # training steps without a new validation best
    unroll: int = 1
    n_step: int = 5
    replay_capacity: int = 500  # episodes
    reanalyze_period: int = 500
    reanalyze_fraction: float = 0.05
    actor_ratio: float = 0.1  # training steps per observed transition
    d: int = 32
    hidden: int = 32
    dirichlet_alpha: float = 0.3
    noise_fraction: float = 0.25
    episode_steps: int = 600
    validation_period: int = 1000
    validation_beta: int = 0  # prior-greedy acting keeps the cadence affordable
    checkpoint_period: int = 1000
    max_train_steps: int = 20_000

    def search_config(self, root_noise: bool = True, beta: Optional[int] = None) -> SearchConfig:
        return SearchConfig(
            beta=self.beta if beta is None else beta,
            delta=self.delta,
            c1=self.c1,
            c2=self.c2,
            c3=self.c3,
            c_base=self.c_base,
            c_init=self.c_init,
            gamma=self.gamma,
            dirichlet_alpha=self.dirichlet_alpha,
            noise_fraction=self.noise_fraction,
            root_noise=root_noise,
        )


@dataclass
class StepRecord:
    veh_feat: np.ndarray  # float32
    veh_lane: np.ndarray  # int32
    controller: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    action: dict[str, int]
    lane_rewards: np.ndarray  # float32
    reward_total: float
    search_value: float
    targets: list[LocalTarget]


@dataclass
class EpisodeRecord:
    network: RoadNetwork
    steps: list[StepRecord]


def compress_step(obs: GraphObservation, action, outcome, result) -> StepRecord:
    s = obs.snapshot
    return StepRecord(
        veh_feat=obs.veh_feat.astype(np.float32),
        veh_lane=obs.veh_lane.astype(np.int32),
        controller=(
            s.current.copy(),
            s.target.copy(),
            s.yellow_remaining.copy(),
            s.tsls.copy(),
        ),
        action=dict(action),
        lane_rewards=outcome.lane_rewards.astype(np.float32),
        reward_total=float(outcome.global_reward),
        search_value=float(result.root_value),
        targets=result.targets,
    )


def rebuild_observation(net: RoadNetwork, step: StepRecord) -> GraphObservation:
    cur, tgt, yel, tsls = step.controller
    snap = ControllerSnapshot(
        get_tables(net), cur.copy(), tgt.copy(), yel.copy(), tsls.copy()
    )
    return observation_from_snapshot(
        snap,
        step.veh_feat.astype(np.float64),
        step.veh_lane.astype(np.int64),
        net,
    )


class ReplayBuffer:
    def __init__(self, capacity_episodes: int):
        self.episodes: deque[EpisodeRecord] = deque(maxlen=capacity_episodes)
        self.reanalyze_cursor = 0

    def add(self, ep: EpisodeRecord):
        self.episodes.append(ep)

    def total_positions(self) -> int:
        return sum(len(e.steps) for e in self.episodes)

    def sample_position(self, rng: np.random.Generator) -> tuple[EpisodeRecord, int]:
        total = self.total_positions()
        k = int(rng.integers(total))
        for ep in self.episodes:
            if k < len(ep.steps):
                return ep, k
            k -= len(ep.steps)
        raise RuntimeError("unreachable")

    def oldest_positions(self, fraction: float):
        count = max(1, int(self.total_positions() * fraction))
        out = []
        for ep in self.episodes:
            for t in range(len(ep.steps)):
                out.append((ep, t))
                if len(out) >= count:
                    return out
        return out


# -- targets ---------------------------------------------------------------------


def value_target(ep: EpisodeRecord, t: int, hp: HyperParams) -> float:
    """n-step discounted reward sum with a search-value bootstrap.

    Positions at or past the episode end contribute absorbing zeros, and a
    bootstrap is only added when the position n steps out still exists.
    """
    n = len(ep.steps)
    if t >= n:
        return 0.0
    z = 0.0
    for k in range(hp.n_step):
        if t + k >= n:
            return z
        z += (hp.gamma**k) * ep.steps[t + k].reward_total
    tb = t + hp.n_step
    if tb < n:
        z += (hp.gamma**hp.n_step) * ep.steps[tb].search_value
    return z


# -- optimization ------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def update(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name in sorted(grads):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1**self.t)
            vhat = self.v[name] / (1 - b2**self.t)
            tensors[name] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -- loss ---------------------------------------------------------------------------


def _phi_loss(tape: Tape, logits, targets: list[LocalTarget]):
    """Cross-entropy over legal phases, averaged across intersections."""
    terms = []
    for lt in targets:
        sliced = tape.gather(logits, lt.global_idx)
        if lt.dist is None:
            terms.append(tape.softmax_xent(sliced, lt.chosen))
        else:
            soft = None
            for i, w in enumerate(lt.dist):
                if w <= 0.0:
                    continue
                piece = tape.scale(tape.softmax_xent(sliced, i), float(w))
                soft = piece if soft is None else tape.add(soft, piece)
            terms.append(soft)
    total = terms[0]
    for x in terms[1:]:
        total = tape.add(total, x)
    return tape.scale(total, 1.0 / len(terms))


def position_loss(tape: Tape, ops, pv, params: ModelParams, ep: EpisodeRecord, t: int, hp: HyperParams):
    """Loss nodes (value, reward, prior) for one sampled position."""
    obs = rebuild_observation(ep.network, ep.steps[t])
    latent = initial_representation(params, obs, ops, pv)
    _, _, _, v_tot = predict_value_reward(params, latent, ops, pv)
    lv = tape.sq_err(v_tot, value_target(ep, t, hp))
    logits = phase_logits(params, latent, obs.legal_mask, ops, pv)
    lphi = _phi_loss(tape, logits, ep.steps[t].targets)
    lv_u = lr_u = lphi_u = None
    n_u = 0
    for u in range(1, hp.unroll + 1):
        if t + u - 1 >= len(ep.steps):
            break
        n_u += 1
        rec = ep.steps[t + u - 1]
        latent = dynamics_step(params, latent, rec.action, ops, pv)
        _, _, r_tot, v_tot = predict_value_reward(params, latent, ops, pv)
        r_term = tape.sq_err(r_tot, rec.reward_total)
        lr_u = r_term if lr_u is None else tape.add(lr_u, r_term)
        v_term = tape.sq_err(v_tot, value_target(ep, t + u, hp))
        lv_u = v_term if lv_u is None else tape.add(lv_u, v_term)
        if t + u < len(ep.steps):
            mask = latent.snapshot.legal_mask()
            logits_u = phase_logits(params, latent, mask, ops, pv)
            p_term = _phi_loss(tape, logits_u, ep.steps[t + u].targets)
            lphi_u = p_term if lphi_u is None else tape.add(lphi_u, p_term)
    # unrolled-step losses contribute at single-step scale regardless of depth
    if lv_u is not None:
        lv = tape.add(lv, tape.scale(lv_u, 1.0 / n_u))
    if lphi_u is not None:
        lphi = tape.add(lphi, tape.scale(lphi_u, 1.0 / n_u))
    lr_node = (
        tape.scale(lr_u, 1.0 / n_u) if lr_u is not None else tape.const(np.asarray(0.0))
    )
    return lv, lr_node, lphi


def train_step(
    buffer: ReplayBuffer,
    params: ModelParams,
    hp: HyperParams,
    rng: np.random.Generator,
    opt: Adam,
) -> dict[str, float]:
    tape = Tape()
    ops = TapeOps(tape)
    pv = ParamAccess(params, tape)
    lv_all = lr_all = lphi_all = None
    for _ in range(hp.batch_size):
        ep, t = buffer.sample_position(rng)
        lv, lr_node, lphi = position_loss(tape, ops, pv, params, ep, t, hp)
        lv_all = lv if lv_all is None else tape.add(lv_all, lv)
        lr_all = lr_node if lr_all is None else tape.add(lr_all, lr_node)
        lphi_all = lphi if lphi_all is None else tape.add(lphi_all, lphi)
    inv = 1.0 / hp.batch_size
    total = tape.scale(
        tape.add(tape.add(lv_all, lr_all), lphi_all), inv
    )
    tape.backward(total)
    opt.update(params.tensors, tape.grads())
    return {
        "loss": float(total.value),
        "loss_v": float(lv_all.value) * inv,
        "loss_r": float(lr_all.value) * inv,
        "loss_phi": float(lphi_all.value) * inv,
    }


# -- collection --------------------------------------------------------------------


def collect_episode(
    net: RoadNetwork,
    params: ModelParams,
    hp: HyperParams,
    rng: np.random.Generator,
    planner_fn: Optional[Callable] = None,
) -> EpisodeRecord:
    """One 600-step episode acting through the planner, noise fixed throughout."""
    resample_noise(params, rng)
    tp = fresh_trip_process(net, rng)
    trips = generate_trips(net, tp, hp.episode_steps, rng)
    sim = TrafficSim(net, trips)
    cfg = hp.search_config(root_noise=True)
    planner = planner_fn or plan_from_obs
    steps: list[StepRecord] = []
    for _ in range(hp.episode_steps):
        obs = encode_observation(sim)
        res = planner(obs, params, cfg, rng)
        outcome = sim.step(res.action)
        steps.append(compress_step(obs, res.action, outcome, res))
    return EpisodeRecord(net, steps)


def reanalyze(
    buffer: ReplayBuffer,
    params: ModelParams,
    hp: HyperParams,
    rng: np.random.Generator,
    planner_fn: Optional[Callable] = None,
):
    """Refresh search values and prior targets on the stalest stored positions."""
    planner = planner_fn or plan_from_obs
    cfg = hp.search_config(root_noise=True)
    positions = buffer.oldest_positions(hp.reanalyze_fraction)
    for ep, t in positions:
        obs = rebuild_observation(ep.network, ep.steps[t])
        res = planner(obs, params, cfg, rng)
        ep.steps[t].search_value = float(res.root_value)
        ep.steps[t].targets = res.targets
    buffer.reanalyze_cursor += len(positions)


# -- model-free baseline pieces ------------------------------------------------------


def inbound_lane_rows(net: RoadNetwork) -> dict[str, np.ndarray]:
    out = {}
    for n in net.intersections:
        lanes = sorted({c.in_lane for c in net.intersection_connections[n]})
        out[n] = np.array([net.lane_index[l] for l in lanes], dtype=np.int64)
    return out


def greedy_q_action(params: ModelParams, obs: GraphObservation) -> dict[str, int]:
    """Highest-Q legal phase per intersection; ties take the lowest index."""
    latent = initial_representation(params, obs)
    q = phase_logits(params, latent, obs.legal_mask, head="q")
    snap = obs.snapshot
    t = snap.tables
    action = {}
    for i, name in enumerate(t.net.intersections):
        ids = snap.legal_phase_ids(i)
        vals = [float(q[t.global_phase_index[pid], 0]) for pid in ids]
        action[name] = ids[int(np.argmax(vals))]
    return action


class _EmptyResult:
    root_value = 0.0
    targets: list[LocalTarget] = []


_EMPTY_RESULT = _EmptyResult()


def collect_episode_q(net, params, hp, rng) -> EpisodeRecord:
    resample_noise(params, rng)
    tp = fresh_trip_process(net, rng)
    trips = generate_trips(net, tp, hp.episode_steps, rng)
    sim = TrafficSim(net, trips)
    steps: list[StepRecord] = []
    for _ in range(hp.episode_steps):
        obs = encode_observation(sim)
        action = greedy_q_action(params, obs)
        outcome = sim.step(action)
        steps.append(compress_step(obs, action, outcome, _EMPTY_RESULT))
    return EpisodeRecord(net, steps)


def td_train_step(
    buffer: ReplayBuffer,
    params: ModelParams,
    hp: HyperParams,
    rng: np.random.Generator,
    opt: Adam,
    inbound_cache: dict,
) -> dict[str, float]:
    """One-step TD regression of per-phase Q values on local queue rewards."""
    tape = Tape()
    ops = TapeOps(tape)
    pv = ParamAccess(params, tape)
    total = None
    for _ in range(hp.batch_size):
        ep, t = buffer.sample_position(rng)
        net = ep.network
        key = id(net)
        if key not in inbound_cache:
            inbound_cache[key] = inbound_lane_rows(net)
        inbound = inbound_cache[key]
        tables = get_tables(net)
        obs = rebuild_observation(net, ep.steps[t])
        latent = initial_representation(params, obs, ops, pv)
        q_nodes = phase_logits(params, latent, obs.legal_mask, ops, pv, head="q")
        rows = np.array(
            [
                tables.global_phase_index[ep.steps[t].action[n]]
                for n in net.intersections
            ]
        )
        qsa = tape.gather(q_nodes, rows)
        # bootstrap target from the next stored observation, no gradient through it
        y = np.zeros((len(net.intersections), 1))
        lane_rewards = ep.steps[t].lane_rewards.astype(np.float64)
        for i, name in enumerate(net.intersections):
            y[i, 0] = lane_rewards[inbound[name]].sum()
        if t + 1 < len(ep.steps):
            obs2 = rebuild_observation(net, ep.steps[t + 1])
            latent2 = initial_representation(params, obs2)
            q2 = phase_logits(params, latent2, obs2.legal_mask, head="q")
            for i in range(len(net.intersections)):
                ids = obs2.snapshot.legal_phase_ids(i)
                best = max(
                    float(q2[tables.global_phase_index[pid], 0]) for pid in ids
                )
                y[i, 0] += hp.gamma * best
        term = tape.scale(tape.sq_err(qsa, y), 1.0 / len(net.intersections))
        total = term if total is None else tape.add(total, term)
    total = tape.scale(total, 1.0 / hp.batch_size)
    tape.backward(total)
    opt.update(params.tensors, tape.grads())
    return {"loss": float(total.value), "loss_v": 0.0, "loss_r": 0.0, "loss_phi": float(total.value)}


# -- constraint regimes ----------------------------------------------------------------


def assign_constraints(net: RoadNetwork, mode: str, rng: np.random.Generator) -> RoadNetwork:
    """cyclic | acyclic | hybrid (half the intersections each, rounded down acyclic)."""
    if mode == "cyclic":
        return net.with_constraint_types({n: CYCLIC for n in net.intersections})
    if mode == "acyclic":
        return net.with_constraint_types({n: ACYCLIC for n in net.intersections})
    if mode != "hybrid":
        raise ValueError(f"unknown constraint mode: {mode}")
    names = list(net.intersections)
    order = rng.permutation(len(names))
    half = len(names) // 2
    if len(names) == 1:
        half = int(rng.integers(2))
    assign = {names[idx]: (ACYCLIC if k < half else CYCLIC) for k, idx in enumerate(order)}
    return net.with_constraint_types(assign)


# -- full training run --------------------------------------------------------------------


METHOD_CONSTRAINTS = {
    "mujam": "hybrid",
    "mujam-c": "cyclic",
    "mujam-a": "acyclic",
    "mujam-nnl": "cyclic",
    "mujam-nr": "cyclic",
    "muim": "cyclic",
    "mfgrl": "cyclic",
}

TRAINED_METHODS = tuple(METHOD_CONSTRAINTS)


@dataclass
class TrainLogRow:
    step: int
    loss: float
    loss_v: float
    loss_r: float
    loss_phi: float
    val_reward: Optional[float]
    wall_time: float


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    log: list[TrainLogRow]
    val_history: list[tuple[int, float]]
    stopped_early: bool


def validation_reward(
    params: ModelParams,
    val_sets: list[tuple[RoadNetwork, list]],
    hp: HyperParams,
    seed: int,
    independent: bool = False,
    q_actor: bool = False,
) -> float:
    """Mean episode reward over the validation networks, noise-free acting."""
    saved_noise = {k: v.copy() for k, v in params.noise.items()}
    zero_noise(params)
    cfg = hp.search_config(root_noise=False, beta=hp.validation_beta)
    totals = []
    for k, (net, trips) in enumerate(val_sets):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 7919, k)))
        sim = TrafficSim(net, trips)
        total = 0.0
        for _ in range(hp.episode_steps):
            obs = encode_observation(sim)
            if q_actor:
                action = greedy_q_action(params, obs)
            elif independent:
                action = plan_independent_from_obs(obs, params, cfg, rng).action
            else:
                action = plan_from_obs(obs, params, cfg, rng).action
            total += sim.step(action).global_reward
        totals.append(total)
    params.noise.update(saved_noise)
    return float(np.mean(totals))


def run_training(
    method: str,
    train_nets: list[RoadNetwork],
    val_sets: list[tuple[RoadNetwork, list]],
    hp: HyperParams,
    seed: int,
    out_dir=None,
    log_path=None,
    quiet: bool = True,
) -> TrainResult:
    """Train one method instance; networks must already carry their constraints."""
    if method not in TRAINED_METHODS:
        raise ValueError(f"unknown trained method: {method}")
    ss = np.random.SeedSequence((seed, 104729))
    init_rng, collect_rng, batch_rng, re_rng = [
        np.random.default_rng(s) for s in ss.spawn(4)
    ]
    is_q = method == "mfgrl"
    params = init_params(
        init_rng,
        d=hp.d,
        K=hp.K,
        Kp=hp.Kp,
        hidden=hp.hidden,
        noisy=(method != "mujam-nnl"),
        q_head=is_q,
    )
    opt = Adam(hp.lr)
    buffer = ReplayBuffer(hp.replay_capacity)
    independent = method == "muim"
    use_reanalyze = method not in ("mujam-nr", "mfgrl")
    planner_fn = plan_independent_from_obs if independent else plan_from_obs

    log: list[TrainLogRow] = []
    val_history: list[tuple[int, float]] = []
    best = -np.inf
    best_step = 0
    best_params = params.copy()
    stopped = False
    steps_done = 0
    episode_idx = 0
    inbound_cache: dict = {}
    t0 = time.time()

    while steps_done < hp.max_train_steps and not stopped:
        net = train_nets[episode_idx % len(train_nets)]
        if is_q:
            ep = collect_episode_q(net, params, hp, collect_rng)
        else:
            ep = collect_episode(net, params, hp, collect_rng, planner_fn)
        buffer.add(ep)
        episode_idx += 1
        n_updates = int(round(len(ep.steps) * hp.actor_ratio))
        for _ in range(n_updates):
            if steps_done >= hp.max_train_steps or stopped:
                break
            if is_q:
                losses = td_train_step(buffer, params, hp, batch_rng, opt, inbound_cache)
            else:
                losses = train_step(buffer, params, hp, batch_rng, opt)
            steps_done += 1
            val = None
            if steps_done % hp.validation_period == 0:
                val = validation_reward(
                    params, val_sets, hp, seed, independent=independent, q_actor=is_q
                )
                val_history.append((steps_done, val))
                if val > best:
                    best = val
                    best_step = steps_done
                    best_params = params.copy()
                elif steps_done - best_step >= hp.patience:
                    stopped = True
            if use_reanalyze and steps_done % hp.reanalyze_period == 0 and not stopped:
                reanalyze(buffer, params, hp, re_rng, planner_fn)
            if out_dir is not None and steps_done % hp.checkpoint_period == 0:
                save_params(params, f"{out_dir}/ckpt_{steps_done:06d}.bin")
            log.append(
                TrainLogRow(
                    steps_done,
                    losses["loss"],
                    losses["loss_v"],
                    losses["loss_r"],
                    losses["loss_phi"],
                    val,
                    time.time() - t0,
                )
            )
        if not quiet and log:
            print(
                f"[{method} seed {seed}] episode {episode_idx}, "
                f"steps {steps_done}, loss {log[-1].loss:.4f}",
                flush=True,
            )

    if not val_history:
        best_params = params.copy()
    if out_dir is not None:
        save_params(params, f"{out_dir}/final.bin")
        save_params(best_params, f"{out_dir}/best.bin")
    if log_path is not None:
        write_training_log(log, log_path)
    return TrainResult(params, best_params, log, val_history, stopped)


def write_training_log(log: list[TrainLogRow], path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "loss_r", "loss_v", "loss_phi", "val_reward", "wall_time"])
        for row in log:
            w.writerow(
                [
                    row.step,
                    f"{row.loss:.6f}",
                    f"{row.loss_r:.6f}",
                    f"{row.loss_v:.6f}",
                    f"{row.loss_phi:.6f}",
                    "" if row.val_reward is None else f"{row.val_reward:.6f}",
                    f"{row.wall_time:.2f}",
                ]
            )


def early_stopping_check(history: list[tuple[int, float]], step: int, patience: int) -> bool:
    """True when training should stop: no new best within the patience window."""
    if not history:
        return False
    best_step = max(history, key=lambda kv: (kv[1], -kv[0]))[0]
    return step - best_step >= patience
