"""Extensive-form zero-sum games with imperfect information.

Trees are flattened into breadth-first arrays so that reach probabilities,
counterfactual values and best responses are computed with one vectorized
pass per depth level.  A behaviour profile is a flat vector over *slots*:
one slot per (information set, action) pair, both players concatenated, each
information set occupying a contiguous block.  All profile-consuming
functions accept leading batch dimensions (``(..., n_slots)``).

Chance is an ordinary actor (``CHANCE = 0``) with fixed distributions; its
contribution is folded into the external reach of both players.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from typing import Iterable, TextIO

import numpy as np

from .games import ConfigError

CHANCE = 0
TERMINAL = -1
REACH_EPS = 1e-12


class PerfectRecallError(ValueError):
    """Raised when an information set mixes owners, action sets or histories."""


class _Node:
    __slots__ = ("actor", "label", "infoset", "actions", "children", "probs", "payoff")

    def __init__(self, actor, label="", infoset=None, actions=(), probs=None, payoff=0.0):
        self.actor = actor
        self.label = label
        self.infoset = infoset
        self.actions = tuple(actions)
        self.children: list[_Node] = []
        self.probs = probs
        self.payoff = payoff


@dataclass(frozen=True, eq=False)
class GameTree:
    """Immutable flattened game tree.  Node 0 is the root; ids follow BFS order."""

    name: str
    parent: np.ndarray          # (N,) parent id, -1 at the root
    actor: np.ndarray           # (N,) 0 chance, 1/2 players, -1 terminal
    depth: np.ndarray           # (N,)
    action_label: tuple[str, ...]  # label of the edge into each node
    children_start: np.ndarray  # (N+1,) children of n are children_start[n]:children_start[n+1]
    node_infoset: np.ndarray    # (N,) infoset id of decision nodes, -1 otherwise
    edge_slot: np.ndarray       # (N,) slot of the edge into n when the parent is a player, else -1
    chance_prob: np.ndarray     # (N,) probability of the edge into n when the parent is chance, else 1
    payoff: np.ndarray          # (N,) player-1 payoff at terminals, 0 elsewhere
    infoset_keys: tuple[str, ...]
    infoset_player: np.ndarray  # (I,)
    infoset_actions: tuple[tuple[str, ...], ...]
    slot_start: np.ndarray      # (I+1,)
    metadata: dict

    # ----- derived structure -------------------------------------------------
    def __post_init__(self):
        for arr in (self.parent, self.actor, self.depth, self.children_start, self.node_infoset,
                    self.edge_slot, self.chance_prob, self.payoff, self.infoset_player, self.slot_start):
            arr.setflags(write=False)
        object.__setattr__(self, "_plan", _EvalPlan(self))

    @property
    def num_nodes(self) -> int:
        return len(self.parent)

    @property
    def num_infosets(self) -> int:
        return len(self.infoset_keys)

    @property
    def num_slots(self) -> int:
        return int(self.slot_start[-1])

    @property
    def slot_infoset(self) -> np.ndarray:
        return self._plan.slot_infoset

    @property
    def slot_player(self) -> np.ndarray:
        return self.infoset_player[self._plan.slot_infoset]

    @property
    def terminals(self) -> np.ndarray:
        return np.flatnonzero(self.actor == TERMINAL)

    def children(self, node: int) -> range:
        return range(int(self.children_start[node]), int(self.children_start[node + 1]))

    def infoset_index(self, key: str) -> int:
        return self._plan.key_index[key]

    def infosets_of(self, player: int) -> np.ndarray:
        return np.flatnonzero(self.infoset_player == player)

    def slots_of(self, infoset: int) -> slice:
        return slice(int(self.slot_start[infoset]), int(self.slot_start[infoset + 1]))

    def nodes_in_infoset(self, infoset: int) -> np.ndarray:
        return np.flatnonzero(self.node_infoset == infoset)

    def with_payoff(self, payoff: np.ndarray, **metadata) -> "GameTree":
        """Same tree shape with different terminal payoffs (nonstationary games)."""
        payoff = np.array(payoff, dtype=float)
        if payoff.shape != self.payoff.shape:
            raise ConfigError("payoff vector does not match the tree")
        meta = dict(self.metadata, **metadata)
        tree = object.__new__(GameTree)
        for name in self.__dataclass_fields__:
            object.__setattr__(tree, name, getattr(self, name))
        object.__setattr__(tree, "payoff", payoff)
        object.__setattr__(tree, "metadata", meta)
        payoff.setflags(write=False)
        object.__setattr__(tree, "_plan", self._plan)
        return tree

    def history(self, node: int) -> tuple[str, ...]:
        labels = []
        while node > 0:
            labels.append(self.action_label[node])
            node = int(self.parent[node])
        return tuple(reversed(labels))

    def find_node(self, labels: Iterable[str]) -> int:
        node = 0
        for label in labels:
            for c in self.children(node):
                if self.action_label[c] == label:
                    node = c
                    break
            else:
                raise KeyError(f"no child {label!r} under history {self.history(node)}")
        return node


class _EvalPlan:
    """Index arrays used by the vectorized passes; built once per tree shape."""

    def __init__(self, tree: GameTree):
        n = tree.num_nodes
        parent = tree.parent
        actor = tree.actor
        self.slot_infoset = np.repeat(np.arange(tree.num_infosets), np.diff(tree.slot_start))
        self.slot_lengths = np.diff(tree.slot_start)
        self.key_index = {k: i for i, k in enumerate(tree.infoset_keys)}
        self.max_depth = int(tree.depth.max())
        parent_actor = np.full(n, CHANCE)
        parent_actor[1:] = actor[parent[1:]]
        self.parent_actor = parent_actor
        self.player_edge_nodes = np.flatnonzero(tree.edge_slot >= 0)
        self.player_edge_slots = tree.edge_slot[self.player_edge_nodes]

        # Levels: contiguous id ranges by depth; children of a parent are contiguous.
        self.levels = []
        for d in range(1, self.max_depth + 1):
            nodes = np.flatnonzero(tree.depth == d)
            lo, hi = int(nodes[0]), int(nodes[-1]) + 1
            par = parent[lo:hi]
            starts = np.flatnonzero(np.r_[True, par[1:] != par[:-1]])
            self.levels.append(_Level(lo, hi, par, starts, par[starts], parent_actor[lo:hi]))

        chance = np.ones(n)
        for lvl in self.levels:
            idx = slice(lvl.lo, lvl.hi)
            chance[idx] = chance[lvl.parent] * np.where(lvl.parent_actor == CHANCE, tree.chance_prob[idx], 1.0)
        chance.setflags(write=False)
        self.chance_reach = chance

        # Slot aggregation: player-edge children sorted by slot.
        order = np.argsort(tree.edge_slot[self.player_edge_nodes], kind="stable")
        self.slot_children = self.player_edge_nodes[order]
        child_slots = tree.edge_slot[self.slot_children]
        self.slot_child_starts = np.flatnonzero(np.r_[True, child_slots[1:] != child_slots[:-1]])
        if len(self.slot_child_starts) != tree.num_slots:
            raise PerfectRecallError("every (infoset, action) slot needs at least one history")
        self.slot_child_parent = parent[self.slot_children]
        self.slot_child_sign = np.where(tree.infoset_player[self.slot_infoset[child_slots]] == 1, 1.0, -1.0)

        # Decision nodes sorted by infoset.
        decision = np.flatnonzero(tree.node_infoset >= 0)
        order = np.argsort(tree.node_infoset[decision], kind="stable")
        self.infoset_nodes = decision[order]
        iset = tree.node_infoset[self.infoset_nodes]
        self.infoset_node_starts = np.flatnonzero(np.r_[True, iset[1:] != iset[:-1]])

        # Best-response helpers per level and player.
        self.br = {}
        for player in (1, 2):
            per_level = []
            for lvl in self.levels:
                idx = np.arange(lvl.lo, lvl.hi)
                mine = idx[lvl.parent_actor == player]
                if len(mine) == 0:
                    per_level.append(None)
                    continue
                slots = tree.edge_slot[mine]
                order = np.argsort(slots, kind="stable")
                mine = mine[order]
                slots = slots[order]
                slot_starts = np.flatnonzero(np.r_[True, slots[1:] != slots[:-1]])
                uniq_slots = slots[slot_starts]
                isets = self.slot_infoset[uniq_slots]
                iset_starts = np.flatnonzero(np.r_[True, isets[1:] != isets[:-1]])
                seg_len = np.diff(np.r_[iset_starts, len(uniq_slots)])
                # position of each child within the level's uniq_slots
                child_pos = np.repeat(np.arange(len(uniq_slots)), np.diff(np.r_[slot_starts, len(mine)]))
                per_level.append(_BrLevel(mine, slot_starts, uniq_slots, iset_starts, seg_len,
                                          child_pos, mine - lvl.lo))
            self.br[player] = per_level


@dataclass
class _Level:
    lo: int
    hi: int
    parent: np.ndarray
    group_starts: np.ndarray
    group_parents: np.ndarray
    parent_actor: np.ndarray


@dataclass
class _BrLevel:
    children: np.ndarray
    slot_starts: np.ndarray
    slots: np.ndarray
    iset_starts: np.ndarray
    seg_len: np.ndarray
    child_pos: np.ndarray
    local: np.ndarray


# ---------------------------------------------------------------------------
# Construction and validation
# ---------------------------------------------------------------------------

def _flatten(name: str, root: _Node, metadata: dict) -> GameTree:
    nodes = [root]
    parent = [-1]
    depth = [0]
    children_start = []
    head = 0
    while head < len(nodes):
        node = nodes[head]
        children_start.append(len(nodes))
        for child in node.children:
            nodes.append(child)
            parent.append(head)
            depth.append(depth[head] + 1)
        head += 1
    children_start.append(len(nodes))
    n = len(nodes)

    actor = np.array([nd.actor for nd in nodes], dtype=int)
    keys: list[str] = []
    key_index: dict[str, int] = {}
    node_infoset = np.full(n, -1, dtype=int)
    infoset_player: list[int] = []
    infoset_actions: list[tuple[str, ...]] = []
    for i, nd in enumerate(nodes):
        if nd.actor in (1, 2):
            if nd.infoset not in key_index:
                key_index[nd.infoset] = len(keys)
                keys.append(nd.infoset)
                infoset_player.append(nd.actor)
                infoset_actions.append(nd.actions)
            node_infoset[i] = key_index[nd.infoset]
    slot_start = np.r_[0, np.cumsum([len(a) for a in infoset_actions])].astype(int)

    edge_slot = np.full(n, -1, dtype=int)
    chance_prob = np.ones(n)
    for i, nd in enumerate(nodes):
        lo = children_start[i]
        if nd.actor in (1, 2):
            base = slot_start[node_infoset[i]]
            for k in range(len(nd.children)):
                edge_slot[lo + k] = base + k
        elif nd.actor == CHANCE:
            chance_prob[lo:lo + len(nd.children)] = nd.probs

    tree = GameTree(
        name=name,
        parent=np.array(parent, dtype=int),
        actor=actor,
        depth=np.array(depth, dtype=int),
        action_label=tuple(nd.label for nd in nodes),
        children_start=np.array(children_start, dtype=int),
        node_infoset=node_infoset,
        edge_slot=edge_slot,
        chance_prob=chance_prob,
        payoff=np.array([nd.payoff if nd.actor == TERMINAL else 0.0 for nd in nodes]),
        infoset_keys=tuple(keys),
        infoset_player=np.array(infoset_player, dtype=int),
        infoset_actions=tuple(infoset_actions),
        slot_start=slot_start,
        metadata=dict(metadata),
    )
    validate_tree(tree, nodes)
    return tree


def validate_tree(tree: GameTree, nodes: list[_Node] | None = None) -> None:
    """Check chance distributions and perfect recall.

    Perfect recall here means: every history of an information set has the
    same owner, the same action labels, the same sequence of (own infoset,
    own action) pairs from the root, and the same depth (the last condition
    lets best responses be computed level by level).
    """
    for i in np.flatnonzero(tree.actor == CHANCE):
        ch = tree.children(i)
        total = tree.chance_prob[ch.start:ch.stop].sum()
        if len(ch) == 0 or abs(total - 1.0) > 1e-12:
            raise ConfigError(f"chance node {i} distribution sums to {total}")
    if nodes is not None:
        for i, nd in enumerate(nodes):
            if nd.actor in (1, 2) and len(nd.children) != len(nd.actions):
                raise PerfectRecallError(f"node {i} has {len(nd.children)} children for actions {nd.actions}")

    own_seq: dict[int, tuple] = {}
    for n in range(tree.num_nodes):
        seq = []
        m = n
        while m > 0:
            p = int(tree.parent[m])
            if tree.actor[p] in (1, 2):
                seq.append((int(tree.actor[p]), int(tree.node_infoset[p]), tree.action_label[m]))
            m = p
        own_seq[n] = tuple(reversed(seq))

    for iset in range(tree.num_infosets):
        members = tree.nodes_in_infoset(iset)
        owner = tree.infoset_player[iset]
        if np.any(tree.actor[members] != owner):
            raise PerfectRecallError(f"infoset {tree.infoset_keys[iset]!r} mixes owners")
        labels = {tuple(tree.action_label[c] for c in tree.children(int(h))) for h in members}
        if len(labels) != 1 or next(iter(labels)) != tree.infoset_actions[iset]:
            raise PerfectRecallError(f"infoset {tree.infoset_keys[iset]!r} has inconsistent actions {labels}")
        seqs = {tuple(s for s in own_seq[int(h)] if s[0] == owner) for h in members}
        if len(seqs) != 1:
            raise PerfectRecallError(f"infoset {tree.infoset_keys[iset]!r} violates perfect recall")
        if len(set(tree.depth[members].tolist())) != 1:
            raise PerfectRecallError(f"infoset {tree.infoset_keys[iset]!r} spans several depths")


def tree_from_nested(name: str, spec, metadata: dict | None = None) -> GameTree:
    """Build a tree from nested tuples (handy for small hand-made games in tests).

    Node forms: ``("T", payoff)``, ``("C", [(label, prob, child), ...])`` and
    ``(player, infoset_key, [(label, child), ...])``.
    """

    def build(s, label):
        if s[0] == "T":
            return _Node(TERMINAL, label, payoff=float(s[1]))
        if s[0] == "C":
            node = _Node(CHANCE, label, probs=np.array([p for _, p, _ in s[1]], dtype=float))
            node.children = [build(c, lab) for lab, _, c in s[1]]
            return node
        player, key, edges = s
        node = _Node(player, label, infoset=key, actions=[lab for lab, _ in edges])
        node.children = [build(c, lab) for lab, c in edges]
        return node

    return _flatten(name, build(spec, ""), metadata or {})


# ---------------------------------------------------------------------------
# Kuhn poker
# ---------------------------------------------------------------------------

KUHN_CARDS = ("J", "Q", "K")


def build_kuhn(bet_size: float = 1.0) -> GameTree:
    """Three-card Kuhn poker with ante 1 and a configurable bet size.

    A single chance node deals one of the 6 ordered (P1, P2) card pairs.
    Actions are ``p`` (check/fold) and ``b`` (bet/call).  The tree has
    55 nodes: 1 chance, 24 decision and 30 terminal, and 12 information sets
    (6 per player).  A negative bet size is kept as a signed transfer; only
    terminal payoffs change.
    """
    bet = float(bet_size)
    if not np.isfinite(bet):
        raise ConfigError("bet size must be finite")
    root = _Node(CHANCE, "", probs=np.full(6, 1.0 / 6.0))
    for c1, c2 in permutations(range(3), 2):
        win = 1.0 if c1 > c2 else -1.0
        k1, k2 = KUHN_CARDS[c1], KUHN_CARDS[c2]

        def key(player, card, hist):
            return f"{player}|{card}||{hist}"

        p1 = _Node(1, k1 + k2, key(1, k1, ""), ("p", "b"))
        p2_after_p = _Node(2, "p", key(2, k2, "p"), ("p", "b"))
        p2_after_b = _Node(2, "b", key(2, k2, "b"), ("p", "b"))
        p1_after_pb = _Node(1, "b", key(1, k1, "pb"), ("p", "b"))
        p1_after_pb.children = [_Node(TERMINAL, "p", payoff=-1.0),
                                _Node(TERMINAL, "b", payoff=win * (1.0 + bet))]
        p2_after_p.children = [_Node(TERMINAL, "p", payoff=win), p1_after_pb]
        p2_after_b.children = [_Node(TERMINAL, "p", payoff=1.0),
                               _Node(TERMINAL, "b", payoff=win * (1.0 + bet))]
        p1.children = [p2_after_p, p2_after_b]
        root.children.append(p1)
    meta = {"game": "kuhn", "bet_size": bet}
    if bet < 0:
        meta["negative_bet"] = True
    return _flatten("kuhn", root, meta)


def kuhn_at_bet(bet_size: float) -> GameTree:
    """Kuhn tree with the given bet size; payoffs are affine in the bet, so trees share one shape."""
    base0, base1 = _kuhn_bases()
    payoff = base0.payoff + float(bet_size) * (base1.payoff - base0.payoff)
    meta = {"bet_size": float(bet_size), "negative_bet": float(bet_size) < 0}
    return base0.with_payoff(payoff, **meta)


@lru_cache(maxsize=1)
def _kuhn_bases() -> tuple[GameTree, GameTree]:
    return build_kuhn(0.0), build_kuhn(1.0)


# ---------------------------------------------------------------------------
# Leduc hold'em
# ---------------------------------------------------------------------------

LEDUC_CARDS = ("Js", "Jh", "Qs", "Qh", "Ks", "Kh")
LEDUC_RAISES = (2.0, 4.0)
LEDUC_MAX_RAISES = 2


def _leduc_rank(card: str) -> int:
    return "JQK".index(card[0])


def _leduc_round(history: str, first_player: int = 1):
    """Successor structure of one betting round.

    Returns ``(player_to_act, legal_actions)`` or ``("fold", loser)`` /
    ``("done", None)`` when the round is over.  ``history`` is the round's
    action string over {f, c, r}.
    """
    if history.endswith("f"):
        loser = first_player if len(history) % 2 == 1 else 3 - first_player
        return "fold", loser
    raises = history.count("r")
    if len(history) >= 2 and history.endswith("c"):
        return "done", None
    player = first_player if len(history) % 2 == 0 else 3 - first_player
    facing_bet = history.endswith("r")
    actions = (["f"] if facing_bet else []) + ["c"] + (["r"] if raises < LEDUC_MAX_RAISES else [])
    return player, tuple(actions)


def _leduc_contrib(history: str, raise_size: float) -> tuple[float, float]:
    """Chips put in by (P1, P2) during one round, P1 acting first."""
    put = [0.0, 0.0]
    for k, a in enumerate(history):
        me = k % 2
        if a == "r":
            put[me] = put[1 - me] + raise_size
        elif a == "c":
            put[me] = put[1 - me]
    return put[0], put[1]


def build_leduc() -> GameTree:
    """Leduc hold'em: 6 cards (J/Q/K in two suits), ante 1, raises 2 then 4, at most 2 raises per round.

    A single chance node deals the 30 ordered private-card pairs; a second
    chance node reveals the public card from the remaining 4 after a
    completed first round.  Player 1 acts first in both rounds.  A pair with
    the public card wins, otherwise the higher rank wins, equal ranks split.
    Information-set keys contain the full card (rank and suit).
    """
    root = _Node(CHANCE, "", probs=np.full(30, 1.0 / 30.0))

    def key(player, private, public, r1, r2):
        hist = r1 if r2 is None else f"{r1}/{r2}"
        return f"{player}|{private}|{public}|{hist}"

    def showdown(c1, c2, public):
        p1_pair = c1[0] == public[0]
        p2_pair = c2[0] == public[0]
        if p1_pair != p2_pair:
            return 1.0 if p1_pair else -1.0
        r1, r2 = _leduc_rank(c1), _leduc_rank(c2)
        return float(np.sign(r1 - r2))

    def expand(c1, c2, r1, public, r2, label):
        rnd = 0 if public is None else 1
        hist = r1 if rnd == 0 else r2
        status, info = _leduc_round(hist)
        if status == "fold":
            a1, b1 = _leduc_contrib(r1, LEDUC_RAISES[0])
            a2, b2 = _leduc_contrib(r2, LEDUC_RAISES[1]) if rnd == 1 else (0.0, 0.0)
            p1_in, p2_in = 1.0 + a1 + a2, 1.0 + b1 + b2
            payoff = -p1_in if info == 1 else p2_in
            return _Node(TERMINAL, label, payoff=payoff)
        if status == "done":
            if rnd == 0:
                remaining = [c for c in LEDUC_CARDS if c not in (c1, c2)]
                node = _Node(CHANCE, label, probs=np.full(len(remaining), 1.0 / len(remaining)))
                node.children = [expand(c1, c2, r1, pc, "", pc) for pc in remaining]
                return node
            a1, b1 = _leduc_contrib(r1, LEDUC_RAISES[0])
            a2, b2 = _leduc_contrib(r2, LEDUC_RAISES[1])
            pot_each = 1.0 + a1 + a2
            assert pot_each == 1.0 + b1 + b2
            return _Node(TERMINAL, label, payoff=showdown(c1, c2, public) * pot_each)
        player, actions = status, info
        private = c1 if player == 1 else c2
        node = _Node(player, label, key(player, private, public or "", r1, r2 if rnd == 1 else None), actions)
        for a in actions:
            if rnd == 0:
                node.children.append(expand(c1, c2, r1 + a, None, None, a))
            else:
                node.children.append(expand(c1, c2, r1, public, r2 + a, a))
        return node

    for c1, c2 in permutations(LEDUC_CARDS, 2):
        root.children.append(expand(c1, c2, "", None, None, c1 + c2))
    return _flatten("leduc", root, {"game": "leduc"})


TREE_BUILDERS = {"kuhn": build_kuhn, "leduc": build_leduc}


def build_tree(name: str, **kwargs) -> GameTree:
    if name not in TREE_BUILDERS:
        raise ConfigError(f"unknown extensive-form game {name!r}; choose from {sorted(TREE_BUILDERS)}")
    return TREE_BUILDERS[name](**kwargs)


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

def uniform_profile(tree: GameTree) -> np.ndarray:
    return 1.0 / np.repeat(tree._plan.slot_lengths, tree._plan.slot_lengths).astype(float)


def random_profile(tree: GameTree, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Flat-Dirichlet draw at every information set."""
    shape = () if size is None else (size,)
    gam = rng.standard_gamma(1.0, size=shape + (tree.num_slots,))
    return gam / segment_sum(tree, gam, expand=True)


def segment_sum(tree: GameTree, values: np.ndarray, expand: bool = False) -> np.ndarray:
    """Sum slot values per information set (optionally broadcast back to slots)."""
    sums = np.add.reduceat(values, tree.slot_start[:-1], axis=-1)
    if expand:
        return sums[..., tree._plan.slot_infoset]
    return sums


def validate_profile(tree: GameTree, profile: np.ndarray, tol: float = 1e-12) -> None:
    profile = np.asarray(profile, dtype=float)
    if profile.shape[-1] != tree.num_slots:
        raise ConfigError(f"profile has {profile.shape[-1]} slots, tree has {tree.num_slots}")
    if not np.all(np.isfinite(profile)) or np.any(profile < -tol):
        raise ValueError("profile has negative or non-finite entries")
    sums = segment_sum(tree, profile)
    if np.any(np.abs(sums - 1.0) > tol * 4):
        raise ValueError("profile is not a simplex at every information set")


def profile_from_dict(tree: GameTree, policy: dict[str, dict[str, float] | Iterable[float]]) -> np.ndarray:
    """Flat profile from ``{infoset_key: {action: prob}}`` (or a probability list)."""
    flat = np.empty(tree.num_slots)
    for iset, key in enumerate(tree.infoset_keys):
        if key not in policy:
            raise ConfigError(f"policy is missing information set {key!r}")
        entry = policy[key]
        if isinstance(entry, dict):
            entry = [entry[a] for a in tree.infoset_actions[iset]]
        flat[tree.slots_of(iset)] = entry
    validate_profile(tree, flat)
    return flat


def profile_to_dict(tree: GameTree, profile: np.ndarray) -> dict[str, dict[str, float]]:
    return {
        key: dict(zip(tree.infoset_actions[i], map(float, profile[tree.slots_of(i)])))
        for i, key in enumerate(tree.infoset_keys)
    }


# ---------------------------------------------------------------------------
# Reach probabilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReachTable:
    """Per-history reach contributions; arrays carry the profile's batch dims."""

    player1: np.ndarray   # (..., N)
    player2: np.ndarray   # (..., N)
    chance: np.ndarray    # (N,)
    infoset_external: np.ndarray  # (..., I) external reach of each infoset for its owner

    @property
    def total(self) -> np.ndarray:
        return self.player1 * self.player2 * self.chance

    def own(self, player: int) -> np.ndarray:
        return self.player1 if player == 1 else self.player2

    def external(self, player: int) -> np.ndarray:
        return (self.player2 if player == 1 else self.player1) * self.chance


def edge_probs(tree: GameTree, profile: np.ndarray) -> np.ndarray:
    """Probability of the edge leading into every node (1 at the root)."""
    plan = tree._plan
    probs = np.broadcast_to(tree.chance_prob, profile.shape[:-1] + (tree.num_nodes,)).copy()
    probs[..., plan.player_edge_nodes] = profile[..., plan.player_edge_slots]
    return probs


def compute_reach(tree: GameTree, profile: np.ndarray, probs: np.ndarray | None = None) -> ReachTable:
    """Own and external reach of every history in one root-to-leaf pass."""
    profile = np.asarray(profile, dtype=float)
    if profile.shape[-1] != tree.num_slots:
        raise ConfigError(f"profile has {profile.shape[-1]} slots, tree has {tree.num_slots}")
    if probs is None:
        probs = edge_probs(tree, profile)
    plan = tree._plan
    batch = profile.shape[:-1]
    r1 = np.ones(batch + (tree.num_nodes,))
    r2 = np.ones(batch + (tree.num_nodes,))
    for lvl in plan.levels:
        idx = slice(lvl.lo, lvl.hi)
        p = probs[..., idx]
        r1[..., idx] = r1[..., lvl.parent] * np.where(lvl.parent_actor == 1, p, 1.0)
        r2[..., idx] = r2[..., lvl.parent] * np.where(lvl.parent_actor == 2, p, 1.0)
    chance = plan.chance_reach
    nodes = plan.infoset_nodes
    owner = tree.actor[nodes]
    ext = np.where(owner == 1, r2[..., nodes], r1[..., nodes]) * chance[nodes]
    iset_ext = np.add.reduceat(ext, plan.infoset_node_starts, axis=-1)
    return ReachTable(r1, r2, chance, iset_ext)


# ---------------------------------------------------------------------------
# Values, counterfactual values and advantages
# ---------------------------------------------------------------------------

def node_values(tree: GameTree, profile: np.ndarray, probs: np.ndarray | None = None) -> np.ndarray:
    """Expected player-1 payoff from every node onward under the full profile."""
    if probs is None:
        probs = edge_probs(tree, profile)
    values = np.broadcast_to(tree.payoff, probs.shape).copy()
    for lvl in reversed(tree._plan.levels):
        contrib = probs[..., lvl.lo:lvl.hi] * values[..., lvl.lo:lvl.hi]
        values[..., lvl.group_parents] = np.add.reduceat(contrib, lvl.group_starts, axis=-1)
    return values


def game_value(tree: GameTree, profile: np.ndarray) -> np.ndarray | float:
    """Expected payoff of player 1 under the profile."""
    v = node_values(tree, np.asarray(profile, dtype=float))[..., 0]
    return float(v) if np.ndim(v) == 0 else v


@dataclass(frozen=True)
class CfValueTable:
    """Counterfactual quantities for every slot of both players.

    ``values[k]`` is v_i(x, a) (external-reach weighted), ``infoset_values``
    is v_i(x) = sum_a pi(a|x) v_i(x, a), ``external_reach`` is rho^{-i}(x),
    and ``advantages`` is (v_i(x, a) - v_i(x)) / rho^{-i}(x), set to 0 where
    the external reach is below ``REACH_EPS``.
    """

    values: np.ndarray
    infoset_values: np.ndarray
    external_reach: np.ndarray
    advantages: np.ndarray
    slot_reach: np.ndarray
    slot_infoset: np.ndarray

    def weighted_advantages(self) -> np.ndarray:
        """v(x, a) - v(x): the advantage scaled by the external reach."""
        return self.values - self.infoset_values[..., self.slot_infoset]

    def conditional_values(self) -> np.ndarray:
        """Expected payoff given the infoset is reached and the action is taken."""
        safe = np.where(self.slot_reach > REACH_EPS, self.slot_reach, 1.0)
        return np.where(self.slot_reach > REACH_EPS, self.values / safe, 0.0)


def compute_cf_values(tree: GameTree, profile: np.ndarray, reach: ReachTable | None = None) -> CfValueTable:
    """Counterfactual values, infoset values and normalized advantages in one backward pass."""
    profile = np.asarray(profile, dtype=float)
    probs = edge_probs(tree, profile)
    if reach is None:
        reach = compute_reach(tree, profile, probs)
    plan = tree._plan
    w1 = node_values(tree, profile, probs)
    kids = plan.slot_children
    par = plan.slot_child_parent
    ext_par = np.where(plan.slot_child_sign > 0, reach.player2[..., par], reach.player1[..., par]) * reach.chance[par]
    contrib = plan.slot_child_sign * ext_par * w1[..., kids]
    values = np.add.reduceat(contrib, plan.slot_child_starts, axis=-1)
    iset_values = segment_sum(tree, profile * values)
    slot_reach = reach.infoset_external[..., plan.slot_infoset]
    diff = values - iset_values[..., plan.slot_infoset]
    ok = slot_reach > REACH_EPS
    adv = np.where(ok, diff / np.where(ok, slot_reach, 1.0), 0.0)
    return CfValueTable(values, iset_values, reach.infoset_external, adv, slot_reach, plan.slot_infoset)


# ---------------------------------------------------------------------------
# Best response and NashConv
# ---------------------------------------------------------------------------

def best_response_value(tree: GameTree, profile: np.ndarray, player: int,
                        reach: ReachTable | None = None, probs: np.ndarray | None = None) -> np.ndarray:
    """Exact best-response value of ``player`` against the opponent's fixed strategy.

    Backward induction level by level: at each of the player's information
    sets the action maximizing the external-reach-weighted continuation value
    is selected (ties broken by the first maximizer; only the max matters).
    """
    profile = np.asarray(profile, dtype=float)
    if probs is None:
        probs = edge_probs(tree, profile)
    if reach is None:
        reach = compute_reach(tree, profile, probs)
    plan = tree._plan
    ext = reach.external(player)
    sign = 1.0 if player == 1 else -1.0
    values = np.broadcast_to(sign * tree.payoff, probs.shape).copy()
    for lvl, brl in zip(reversed(plan.levels), reversed(plan.br[player])):
        weights = probs[..., lvl.lo:lvl.hi].copy()
        if brl is not None:
            kids = brl.children
            q_children = ext[..., tree.parent[kids]] * values[..., kids]
            q = np.add.reduceat(q_children, brl.slot_starts, axis=-1)
            seg_max = np.maximum.reduceat(q, brl.iset_starts, axis=-1)
            is_max = q >= np.repeat(seg_max, brl.seg_len, axis=-1)
            csum = np.cumsum(is_max, axis=-1)
            before = np.concatenate([np.zeros(csum.shape[:-1] + (1,), dtype=csum.dtype), csum], axis=-1)
            offset = np.repeat(before[..., brl.iset_starts], brl.seg_len, axis=-1)
            chosen = is_max & (csum - offset == 1)
            weights[..., brl.local] = chosen[..., brl.child_pos]
        contrib = weights * values[..., lvl.lo:lvl.hi]
        values[..., lvl.group_parents] = np.add.reduceat(contrib, lvl.group_starts, axis=-1)
    return values[..., 0]


def nash_conv_efg(tree: GameTree, profile: np.ndarray) -> np.ndarray | float:
    """Sum over players of best-response value minus current value (>= 0)."""
    profile = np.asarray(profile, dtype=float)
    probs = edge_probs(tree, profile)
    reach = compute_reach(tree, profile, probs)
    v1 = node_values(tree, profile, probs)[..., 0]
    br1 = best_response_value(tree, profile, 1, reach, probs)
    br2 = best_response_value(tree, profile, 2, reach, probs)
    out = (br1 - v1) + (br2 + v1)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Reach-weighted Lyapunov potential
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EfgPotential:
    total: np.ndarray         # V, shape (...)
    gamma: np.ndarray         # (..., I) per-infoset Gamma
    s_mass: np.ndarray        # (..., I) per-infoset S
    per_player: dict[int, np.ndarray]


def efg_potential(tree: GameTree, profile: np.ndarray, cf: CfValueTable | None = None) -> EfgPotential:
    """V = sum over infosets of 0.5 * ||rho^{-i}(x) [A(x, .)]_+||^2, with the matching S^x."""
    if cf is None:
        cf = compute_cf_values(tree, profile)
    weighted = cf.slot_reach * np.maximum(cf.advantages, 0.0)
    gamma = 0.5 * segment_sum(tree, weighted**2)
    s_mass = segment_sum(tree, weighted)
    per_player = {p: gamma[..., tree.infoset_player == p].sum(axis=-1) for p in (1, 2)}
    return EfgPotential(gamma.sum(axis=-1), gamma, s_mass, per_player)


# ---------------------------------------------------------------------------
# Debug dump
# ---------------------------------------------------------------------------

def dump_tree(tree: GameTree, out: TextIO) -> None:
    """One tab-separated line per node: id, parent, actor, action label, infoset key, payoff."""
    out.write("#id\tparent\tactor\taction\tinfoset\tpayoff\n")
    names = {CHANCE: "chance", TERMINAL: "terminal", 1: "p1", 2: "p2"}
    for n in range(tree.num_nodes):
        iset = tree.node_infoset[n]
        key = tree.infoset_keys[iset] if iset >= 0 else "-"
        payoff = f"{tree.payoff[n]:g}" if tree.actor[n] == TERMINAL else "-"
        label = tree.action_label[n] or "-"
        out.write(f"{n}\t{tree.parent[n]}\t{names[int(tree.actor[n])]}\t{label}\t{key}\t{payoff}\n")
