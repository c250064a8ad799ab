"""Deterministic synthetic corpus generator.

Produces a corpus with recoverable structure so that routing models have
signal to learn from:

- every group has its own small set of "topic" entities, and every root a
  shared pool, so ticket content identifies the resolver and its root;
- most tickets resolve in one step; multi-step sequences stay inside the
  resolver's root except for a planted affinity partner root, mirroring
  organizations where exactly a few root pairs exchange work;
- tickets that crossed roots carry a little content from the partner root,
  so root-level confusion lines up with the planted transfer affinity.

Generation is a pure function of (config, seed): the same pair always
yields a byte-identical corpus on disk.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .corpus import Corpus, GroupRegistry, RoutingRecord, Ticket
from .errors import ConfigError

ROOT_CODES = ["AC", "PM", "FN", "HR", "NW", "DB", "SC", "OS", "ID", "BI", "CR", "EH"]
LEAF_CODES = ["BE", "FE", "DAT", "UI", "NET", "SRV", "APP", "SEC", "OPS", "QA", "INT", "RPT"]

FILLER_WORDS = [
    "error", "failed", "user", "reports", "issue", "after", "restart", "cannot",
    "access", "when", "trying", "system", "please", "check", "since", "yesterday",
    "update", "blocked", "unable", "login", "screen", "shows", "message", "help",
    "urgent", "again", "still", "works", "nothing", "changed", "team", "request",
    "new", "broken", "slow", "timeout", "response", "missing", "wrong", "status",
]


@dataclass
class GeneratorConfig:
    """Knobs for the synthetic corpus; defaults form the benchmark setup."""

    tickets: int = 2000
    n_roots: int = 8
    n_groups: int = 50
    entities_per_group: int = 6
    shared_per_root: int = 8
    common_entities: int = 20
    one_step_prob: float = 0.58
    # Probability of sequence length 2, 3, 4, ... conditioned on multi-step.
    multi_len_probs: tuple[float, ...] = (0.40, 0.30, 0.30)
    within_root_prob: float = 0.8
    cross_flavor_entities: int = 2
    min_entities: int = 4
    max_entities: int = 8
    filler_ratio: float = 0.6

    def validate(self) -> None:
        if self.tickets < 1:
            raise ConfigError("tickets must be >= 1")
        if self.n_roots < 1:
            raise ConfigError("n_roots must be >= 1")
        if self.n_groups < self.n_roots:
            raise ConfigError("n_groups must be >= n_roots")
        if self.entities_per_group < 1:
            raise ConfigError("entities_per_group must be >= 1")
        if not 0.0 <= self.one_step_prob <= 1.0:
            raise ConfigError("one_step_prob must be in [0, 1]")
        if not 0.0 <= self.within_root_prob <= 1.0:
            raise ConfigError("within_root_prob must be in [0, 1]")
        if not self.multi_len_probs or min(self.multi_len_probs) < 0 or sum(self.multi_len_probs) <= 0:
            raise ConfigError("multi_len_probs must be non-negative with positive mass")
        if self.min_entities < 1 or self.max_entities < self.min_entities:
            raise ConfigError("need 1 <= min_entities <= max_entities")
        if self.filler_ratio < 0:
            raise ConfigError("filler_ratio must be >= 0")

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "GeneratorConfig":
        data = json.loads(Path(path).read_text())
        known = {f: data[f] for f in data if f in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        cfg = cls(**known)
        if isinstance(cfg.multi_len_probs, list):
            cfg.multi_len_probs = tuple(cfg.multi_len_probs)
        cfg.validate()
        return cfg


@dataclass
class _World:
    """The generated organization: groups, topics, and affinity structure."""

    group_ids: list[str]
    by_root: dict[str, list[str]]
    own_entities: dict[str, list[str]]
    shared_entities: dict[str, list[str]]
    common: list[str]
    partner: dict[str, str]
    resolver_weights: list[float] = field(default_factory=list)


def _code(pool: list[str], index: int, prefix: str) -> str:
    if index < len(pool):
        return pool[index]
    return f"{prefix}{index}"


def _build_world(cfg: GeneratorConfig) -> _World:
    roots = [_code(ROOT_CODES, i, "RT") for i in range(cfg.n_roots)]
    by_root: dict[str, list[str]] = {r: [] for r in roots}
    group_ids: list[str] = []
    for i in range(cfg.n_groups):
        root = roots[i % cfg.n_roots]
        leaf = _code(LEAF_CODES, len(by_root[root]), "GX")
        gid = f"{root}.{leaf}"
        by_root[root].append(gid)
        group_ids.append(gid)

    own = {
        gid: [f"{gid.lower().replace('.', '_')}_t{k}" for k in range(cfg.entities_per_group)]
        for gid in group_ids
    }
    shared = {
        root: [f"{root.lower()}_core{k}" for k in range(cfg.shared_per_root)]
        for root in roots
    }
    common = [f"svc_common{k}" for k in range(cfg.common_entities)]

    # Affinity pairs: adjacent roots exchange work; an odd root out pairs
    # back to the first root (asymmetric but still a single neighbor each).
    partner: dict[str, str] = {}
    for i in range(0, cfg.n_roots - 1, 2):
        partner[roots[i]] = roots[i + 1]
        partner[roots[i + 1]] = roots[i]
    if cfg.n_roots % 2 == 1:
        partner[roots[-1]] = roots[0]
    if cfg.n_roots == 1:
        partner[roots[0]] = roots[0]

    # Mild popularity skew over resolvers, so resolved-ticket counts spread.
    weights = [1.0 / (1.0 + idx) ** 0.35 for idx in range(len(group_ids))]
    return _World(group_ids, by_root, own, shared, common, partner, weights)


def _draw_entities(rng: random.Random, cfg: GeneratorConfig, world: _World,
                   resolver: str, crossed_root: bool) -> dict[str, int]:
    root = resolver.split(".", 1)[0]
    n_distinct = rng.randint(cfg.min_entities, cfg.max_entities)
    chosen: list[str] = []
    tries = 0
    while len(chosen) < n_distinct and tries < 6 * n_distinct + 20:
        tries += 1
        r = rng.random()
        if r < 0.62:
            e = rng.choice(world.own_entities[resolver])
        elif r < 0.82:
            e = rng.choice(world.shared_entities[root])
        elif r < 0.90 and world.common:
            e = rng.choice(world.common)
        else:
            # Stray terminology stays within the org neighborhood: a group
            # of the same root or of the partner root.
            scope = world.by_root[root] + world.by_root[world.partner[root]]
            e = rng.choice(world.own_entities[rng.choice(scope)])
        if e not in chosen:
            chosen.append(e)
    if crossed_root and cfg.cross_flavor_entities > 0:
        flavor_pool = world.shared_entities[world.partner[root]]
        for e in rng.sample(flavor_pool, min(cfg.cross_flavor_entities, len(flavor_pool))):
            if e not in chosen:
                chosen.append(e)
    counts: dict[str, int] = {}
    for e in chosen:
        c = 1
        while rng.random() < 0.35 and c < 4:
            c += 1
        counts[e] = c
    return counts


def _draw_sequence(rng: random.Random, cfg: GeneratorConfig, world: _World,
                   resolver: str) -> list[str]:
    if rng.random() < cfg.one_step_prob:
        return [resolver]
    lengths = list(range(2, 2 + len(cfg.multi_len_probs)))
    length = rng.choices(lengths, weights=cfg.multi_len_probs, k=1)[0]
    root = resolver.split(".", 1)[0]
    siblings = [g for g in world.by_root[root] if g != resolver]
    partners = list(world.by_root[world.partner[root]])
    if world.partner[root] == root:
        partners = []
    used = {resolver}
    prefix: list[str] = []
    for _ in range(length - 1):
        pool = siblings if rng.random() < cfg.within_root_prob else partners
        pool = [g for g in pool if g not in used]
        if not pool:
            pool = [g for g in siblings + partners if g not in used]
        if not pool:
            pool = [g for g in world.group_ids if g not in used]
        if not pool:
            break
        g = rng.choice(pool)
        used.add(g)
        prefix.append(g)
    rng.shuffle(prefix)
    return prefix + [resolver]


def _render_text(rng: random.Random, cfg: GeneratorConfig, counts: dict[str, int]) -> str:
    tokens: list[str] = []
    for e, c in counts.items():
        tokens.extend([e] * c)
    n_fillers = max(1, round(len(tokens) * cfg.filler_ratio)) + rng.randint(0, 3)
    tokens.extend(rng.choice(FILLER_WORDS) for _ in range(n_fillers))
    rng.shuffle(tokens)
    return " ".join(tokens)


def generate_synthetic(config: GeneratorConfig, seed: int) -> Corpus:
    """Generate a corpus of tickets with routing records; pure in (config, seed)."""
    config.validate()
    rng = random.Random(seed)
    world = _build_world(config)
    registry = GroupRegistry(world.group_ids)

    tickets: list[Ticket] = []
    records: list[RoutingRecord] = []
    for i in range(config.tickets):
        resolver = rng.choices(world.group_ids, weights=world.resolver_weights, k=1)[0]
        sequence = _draw_sequence(rng, config, world, resolver)
        root = resolver.split(".", 1)[0]
        crossed = any(g.split(".", 1)[0] != root for g in sequence)
        counts = _draw_entities(rng, config, world, resolver, crossed)
        text = _render_text(rng, config, counts)
        order = []
        seen = set()
        for tok in text.split():
            if tok in counts and tok not in seen:
                seen.add(tok)
                order.append(tok)
        entities = tuple((e, counts[e]) for e in order)
        tid = f"t{i:05d}"
        tickets.append(Ticket(tid, text, entities))
        records.append(RoutingRecord(tid, tuple(sequence)))
    return Corpus(tickets, records, registry)
