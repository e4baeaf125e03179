"""Coordinated joint-action tree search over the latent traffic model.

A search runs a fixed number of trajectories. Every trajectory performs one
dynamics-plus-prediction evaluation per depth level, whether or not the joint
action was seen before: duplicate samples merge into the existing child, but
the budget accounting stays exact (beta evaluations at depth 1). Backed-up Q
values keep the best simulated trajectory through each edge, not the mean,
and the root decision is the child with the highest Q.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graphobs import GraphObservation, encode_observation
from .model import (
    LatentState,
    LocalPrior,
    ModelParams,
    dynamics_step,
    initial_representation,
    predict_priors,
    predict_value_reward,
)


@dataclass
class SearchConfig:
    beta: int = 50
    delta: int = 1
    c1: float = 5.0
    c2: float = 0.5
    c3: float = 0.5
    c_base: float = 19652.0
    c_init: float = 1.25
    gamma: float = 0.997
    dirichlet_alpha: float = 0.3
    noise_fraction: float = 0.25
    root_noise: bool = True
    visit_targets: bool = False  # train priors on visit counts instead of the choice

    def __post_init__(self):
        if self.beta < 0 or self.delta < 1:
            raise ValueError("beta must be >= 0 and delta >= 1")


@dataclass
class LocalTarget:
    intersection: str
    phase_ids: list[int]  # legal phases at this state, cycle order
    global_idx: np.ndarray  # rows of those phases in the network phase list
    chosen: int  # position of the selected phase in phase_ids
    dist: Optional[np.ndarray] = None


@dataclass
class SearchResult:
    action: dict[str, int]
    root_value: float
    targets: list[LocalTarget]
    evals: int  # dynamics evaluations spent


class SearchNode:
    __slots__ = ("latent", "priors", "visits", "children", "child_list")

    def __init__(self, latent: LatentState, priors: Optional[list[LocalPrior]]):
        self.latent = latent
        self.priors = priors
        self.visits = 0
        self.children: dict[tuple[int, ...], Child] = {}
        self.child_list: list[Child] = []


class Child:
    __slots__ = ("key", "action", "local_idx", "phi", "r", "q", "visits", "node")

    def __init__(self, key, action, local_idx, phi):
        self.key = key
        self.action = action
        self.local_idx = local_idx
        self.phi = phi
        self.r = 0.0
        self.q = -np.inf
        self.visits = 0
        self.node: Optional[SearchNode] = None


def joint_action_count(priors: list[LocalPrior]) -> int:
    n = 1
    for p in priors:
        n *= len(p.phase_ids)
    return n


def widening_gate(samples: int, actions: int, visits: int, cfg: SearchConfig) -> bool:
    v = max(visits, 1)
    return samples < ((actions / cfg.c1) ** cfg.c2) * (v ** cfg.c3)


def puct_score(child: Child, parent_visits: int, cfg: SearchConfig) -> float:
    c = np.log((parent_visits + cfg.c_base + 1.0) / cfg.c_base) + cfg.c_init
    q = child.q if np.isfinite(child.q) else 0.0
    return q + c * child.phi * np.sqrt(parent_visits) / (1.0 + child.visits)


def puct_select(node: SearchNode, cfg: SearchConfig) -> Child:
    best, best_score = None, -np.inf
    for child in node.child_list:  # creation order; ties keep the earliest
        s = puct_score(child, node.visits, cfg)
        if s > best_score:
            best, best_score = child, s
    return best


def _sample_local(priors: list[LocalPrior], rng: np.random.Generator):
    action, local_idx, phi = {}, [], 1.0
    for p in priors:
        cum = np.cumsum(p.probs)
        i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        i = min(i, len(p.probs) - 1)
        action[p.intersection] = p.phase_ids[i]
        local_idx.append(i)
        phi *= float(p.probs[i])
    return action, tuple(local_idx), phi


def _noised(priors: list[LocalPrior], cfg: SearchConfig, rng) -> list[LocalPrior]:
    if not cfg.root_noise or cfg.noise_fraction <= 0.0:
        return priors
    out = []
    for p in priors:
        noise = rng.dirichlet(np.full(len(p.probs), cfg.dirichlet_alpha))
        mixed = (1.0 - cfg.noise_fraction) * p.probs + cfg.noise_fraction * noise
        out.append(LocalPrior(p.intersection, p.phase_ids, p.global_idx, mixed))
    return out


def _targets_from(priors: list[LocalPrior], local_idx, dists=None) -> list[LocalTarget]:
    return [
        LocalTarget(
            p.intersection,
            list(p.phase_ids),
            p.global_idx,
            local_idx[k],
            None if dists is None else dists[k],
        )
        for k, p in enumerate(priors)
    ]


def plan_from_obs(
    obs: GraphObservation,
    params: ModelParams,
    cfg: SearchConfig,
    rng: np.random.Generator,
) -> SearchResult:
    latent = initial_representation(params, obs)
    priors = _noised(predict_priors(params, latent), cfg, rng)

    if cfg.beta == 0:
        action, local_idx, _ = _sample_local(priors, rng)
        _, _, _, v_tot = predict_value_reward(params, latent)
        return SearchResult(action, v_tot, _targets_from(priors, local_idx), 0)

    root = SearchNode(latent, priors)
    evals = 0
    for _ in range(cfg.beta):
        node = root
        path: list[tuple[SearchNode, Child, float]] = []
        for depth in range(cfg.delta):
            if node.priors is None:
                node.priors = predict_priors(params, node.latent)
            actions = joint_action_count(node.priors)
            if widening_gate(len(node.child_list), actions, node.visits, cfg):
                action, key, phi = _sample_local(node.priors, rng)
                child = node.children.get(key)
                if child is None:
                    child = Child(key, action, key, phi)
                    node.children[key] = child
                    node.child_list.append(child)
            else:
                child = puct_select(node, cfg)
            nxt = dynamics_step(params, node.latent, child.action)
            _, _, r_tot, v_tot = predict_value_reward(params, nxt)
            evals += 1
            child.r = r_tot
            if child.node is None:
                child.node = SearchNode(nxt, None)
            path.append((node, child, v_tot))
            node = child.node
        ret = None
        for parent, child, v_leaf in reversed(path):
            ret = child.r + cfg.gamma * (v_leaf if ret is None else ret)
            child.q = max(child.q, ret)
            child.visits += 1
            parent.visits += 1

    best = max(
        range(len(root.child_list)), key=lambda i: (root.child_list[i].q, -i)
    )
    chosen = root.child_list[best]
    dists = _visit_dists(root) if cfg.visit_targets else None
    return SearchResult(
        chosen.action,
        float(chosen.q),
        _targets_from(priors, chosen.local_idx, dists),
        evals,
    )


def _visit_dists(root: SearchNode) -> list[np.ndarray]:
    dists = []
    for k, p in enumerate(root.priors):
        counts = np.zeros(len(p.phase_ids))
        for child in root.child_list:
            counts[child.local_idx[k]] += child.visits
        total = counts.sum()
        dists.append(counts / total if total > 0 else np.full_like(counts, 1.0 / len(counts)))
    return dists


def plan(sim, params: ModelParams, cfg: SearchConfig, rng) -> SearchResult:
    return plan_from_obs(encode_observation(sim), params, cfg, rng)


def _hold_action_from(latent: LatentState) -> dict[str, int]:
    snap = latent.snapshot
    out = {}
    for i, name in enumerate(snap.tables.net.intersections):
        in_yellow = snap.current[i] != snap.target[i]
        out[name] = int(snap.target[i] if in_yellow else snap.current[i])
    return out


def plan_independent_from_obs(
    obs: GraphObservation,
    params: ModelParams,
    cfg: SearchConfig,
    rng: np.random.Generator,
) -> SearchResult:
    """Per-intersection search with every other controller held on its course.

    Spends beta trajectories per intersection; the combined action takes each
    local argmax. Q estimates are of the joint return under the hold policy
    for the others, so the combination ignores cross-intersection effects on
    purpose: this is the uncoordinated ablation.
    """
    latent = initial_representation(params, obs)
    priors_all = _noised(predict_priors(params, latent), cfg, rng)

    if cfg.beta == 0:
        action, local_idx, _ = _sample_local(priors_all, rng)
        _, _, _, v_tot = predict_value_reward(params, latent)
        return SearchResult(action, v_tot, _targets_from(priors_all, local_idx), 0)

    hold = _hold_action_from(latent)
    combined: dict[str, int] = {}
    local_choices: list[int] = []
    values: list[float] = []
    evals = 0
    for k, prior in enumerate(priors_all):
        root = SearchNode(latent, None)
        root.priors = [prior]
        for _ in range(cfg.beta):
            actions = len(prior.phase_ids)
            if widening_gate(len(root.child_list), actions, root.visits, cfg):
                cum = np.cumsum(prior.probs)
                i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
                i = min(i, len(prior.phase_ids) - 1)
                key = (i,)
                child = root.children.get(key)
                if child is None:
                    joint = dict(hold)
                    joint[prior.intersection] = prior.phase_ids[i]
                    child = Child(key, joint, key, float(prior.probs[i]))
                    root.children[key] = child
                    root.child_list.append(child)
            else:
                child = puct_select(root, cfg)
            nxt = dynamics_step(params, latent, child.action)
            _, _, r_tot, v_tot = predict_value_reward(params, nxt)
            evals += 1
            child.r = r_tot
            ret = child.r + cfg.gamma * v_tot
            child.q = max(child.q, ret)
            child.visits += 1
            root.visits += 1
        best = max(
            range(len(root.child_list)), key=lambda i: (root.child_list[i].q, -i)
        )
        chosen = root.child_list[best]
        combined[prior.intersection] = prior.phase_ids[chosen.local_idx[0]]
        local_choices.append(chosen.local_idx[0])
        values.append(float(chosen.q))

    return SearchResult(
        combined,
        float(np.mean(values)),
        _targets_from(priors_all, local_choices),
        evals,
    )


def plan_independent(sim, params: ModelParams, cfg: SearchConfig, rng) -> SearchResult:
    return plan_independent_from_obs(encode_observation(sim), params, cfg, rng)
