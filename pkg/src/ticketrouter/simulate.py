"""Routing simulation and every evaluation protocol.

All scorers expose one method, score_candidates(ticket, sequence,
candidates) -> list of floats, and rank_step turns those scores into a
deterministic ranking (descending score, ties lexicographic on group id).

The step simulation replays a ticket against its archived sequence: at
each step the scorer ranks the unvisited candidates; the ticket resolves
once the resolver appears high enough (rank 1 for MSTR/RR, top-k for
MADR@k). On a miss the ticket follows its archived route, appending the
next ground-truth group, and once that is exhausted it follows the
recommendation it just received. Because the failure path never depends
on the cutoff k, one trace per ticket serves every metric: the trace
records the resolver's rank at each step, and each metric reads off the
first step where that rank clears its cutoff.

The leave-one-out protocol ranks a fixed 50-group pool per ticket
(resolver, archived groups, candidate-set samples, registry padding) at
an empty sequence, giving hit rates at cutoffs 1, 3, and 5.

Transition-based reference scorers mirror classic ticket-routing search:
first-order (last group only), first-order over all active groups, and
variable-order over sequence suffixes, each starting from the group whose
profile centroid is nearest the ticket in embedding space.
"""

from __future__ import annotations

import hashlib
import random
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import GroupRegistry, RoutingRecord, Ticket
from .errors import ValidationError
from .features import FeaturePipeline
from .ranking import RankerModel

STEP_CAP = 10
LOO_POOL_SIZE = 50
UNRANKED = 10 ** 9

SYSTEM_POINTWISE = "ltr-pointwise"
SYSTEM_PAIRWISE = "ltr-pairwise"
SYSTEM_FM = "markov-fm"
SYSTEM_FMS = "markov-fms"
SYSTEM_VMS = "markov-vms"
SYSTEM_HUMAN = "human"


def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed for one purpose, decoupled from call order."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).hexdigest()
    return int(digest[:16], 16)


class ModelScorer:
    """Scores candidates with the feature pipeline plus a trained ranker."""

    def __init__(self, pipeline: FeaturePipeline, model: RankerModel):
        self.pipeline = pipeline
        self.model = model

    def score_candidates(self, ticket: Ticket, sequence, candidates) -> list[float]:
        matrix = self.pipeline.matrix([(ticket, sequence, g) for g in candidates])
        return list(self.model.score(matrix))


class OracleScorer:
    """Upper-bound self-test scorer: knows every ticket's resolver."""

    def __init__(self, resolver_of: dict[str, str]):
        self.resolver_of = resolver_of

    def score_candidates(self, ticket: Ticket, sequence, candidates) -> list[float]:
        resolver = self.resolver_of[ticket.id]
        return [1.0 if g == resolver else 0.0 for g in candidates]


class RandomScorer:
    """Uniform scores, deterministic per (seed, ticket, step)."""

    def __init__(self, seed: int):
        self.seed = seed

    def score_candidates(self, ticket: Ticket, sequence, candidates) -> list[float]:
        rng = random.Random(derive_seed(self.seed, f"{ticket.id}:{len(sequence)}"))
        return [rng.random() for _ in candidates]


class TransitionScorer:
    """Reference scorers: transition search over the transfer network.

    variant "fm" uses the last group's outgoing weights, "fms" the best
    edge from any group in the sequence, "vms" the best smoothed estimate
    over sequence suffixes of order <= 2. An empty sequence falls back to
    embedding distance against group centroids, and a sequence with no
    usable transition information falls back to the resolver prior.
    """

    VARIANTS = ("fm", "fms", "vms")

    def __init__(self, variant: str, pipeline: FeaturePipeline):
        if variant not in self.VARIANTS:
            raise ValidationError(f"unknown transition variant {variant!r}")
        self.variant = variant
        self.pipeline = pipeline

    def _stage1(self, ticket: Ticket, candidates) -> list[float]:
        t_vec = self.pipeline.models.embeddings.ticket_vector(ticket)
        out = []
        for g in candidates:
            g_vec = self.pipeline.models.group_vectors[g]
            out.append(-float(np.linalg.norm(t_vec - g_vec)))
        return out

    def _prior_fallback(self, candidates) -> list[float]:
        priors = self.pipeline.priors.resolver
        return [priors[g] for g in candidates]

    def score_candidates(self, ticket: Ticket, sequence, candidates) -> list[float]:
        if not sequence:
            return self._stage1(ticket, candidates)
        transfer = self.pipeline.transfer
        if self.variant == "fm":
            edges = transfer.out_edges(sequence[-1])
            if not edges:
                return self._prior_fallback(candidates)
            return [edges.get(g, 0.0) for g in candidates]
        if self.variant == "fms":
            rows = [transfer.out_edges(g_r) for g_r in set(sequence)]
            if not any(rows):
                return self._prior_fallback(candidates)
            return [max(row.get(g, 0.0) for row in rows) for g in candidates]
        stats = self.pipeline.transitions
        known = stats._ctx1_total.get((sequence[-1],), 0) > 0
        if len(sequence) >= 2:
            known = known or stats._ctx2_total.get(tuple(sequence[-2:]), 0) > 0
        if not known:
            return self._prior_fallback(candidates)
        return [stats.features(tuple(sequence), g)[2] for g in candidates]


def rank_step(ticket: Ticket, sequence, candidates, scorer, k: int) -> list[str]:
    """Top-k candidates by score, ties broken lexicographically."""
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("cannot rank an empty candidate set")
    scores = scorer.score_candidates(ticket, tuple(sequence), candidates)
    order = sorted(zip(candidates, scores), key=lambda cs: (-cs[1], cs[0]))
    return [g for g, _ in order[:k]]


@dataclass
class RoutingEpisode:
    """One ticket's simulated trace, reusable for every cutoff k."""

    ticket_id: str
    ground_truth: tuple[str, ...]
    appended: tuple[str, ...]             # group added to the state after each miss
    resolver_ranks: tuple[int, ...]       # resolver's rank at each simulated step
    recommendations: tuple[tuple[str, ...], ...]
    cap: int = STEP_CAP

    @property
    def resolver(self) -> str:
        return self.ground_truth[-1]

    def resolved_step(self, k: int):
        for i, rank in enumerate(self.resolver_ranks):
            if rank <= k:
                return i + 1
        return None

    def steps_used(self, k: int) -> int:
        return self.resolved_step(k) or self.cap

    def simulated_sequence(self, k: int) -> tuple[str, ...]:
        step = self.resolved_step(k)
        if step is None:
            return self.appended[:len(self.resolver_ranks)]
        return self.appended[:step - 1] + (self.resolver,)


def run_episode(ticket: Ticket, record: RoutingRecord, pool, scorer,
                cap: int = STEP_CAP, top_k: int = 10) -> RoutingEpisode:
    resolver = record.resolver
    gt_pending = [g for g in record.sequence[:-1] if g != resolver]
    visited: list[str] = []
    appended: list[str] = []
    ranks: list[int] = []
    recs: list[tuple[str, ...]] = []

    for _ in range(cap):
        candidates = [g for g in pool if g not in visited]
        if not candidates:
            break
        ranked = rank_step(ticket, tuple(visited), candidates, scorer, len(candidates))
        recs.append(tuple(ranked[:top_k]))
        rank = ranked.index(resolver) + 1 if resolver in set(ranked) else UNRANKED
        ranks.append(rank)
        if rank == 1:
            # Every cutoff resolves here; the trace beyond is unreachable.
            appended.append(resolver)
            break
        follow = None
        while gt_pending:                    # skip archived groups already visited
            nxt = gt_pending.pop(0)
            if nxt not in visited:
                follow = nxt
                break
        if follow is None:
            follow = ranked[0]
        appended.append(follow)
        visited.append(follow)

    return RoutingEpisode(ticket.id, record.sequence, tuple(appended),
                          tuple(ranks), tuple(recs), cap)


def run_episodes(records, tickets_by_id, pools, scorer,
                 cap: int = STEP_CAP) -> list[RoutingEpisode]:
    if not records:
        raise ValidationError("empty test set")
    return [
        run_episode(tickets_by_id[rec.ticket_id], rec, pools[rec.ticket_id], scorer, cap)
        for rec in records
    ]


def mstr_rr_from_episodes(episodes, cap: int = STEP_CAP):
    steps = [ep.steps_used(1) for ep in episodes]
    mstr = float(np.mean(steps))
    resolved = [ep.resolved_step(1) for ep in episodes]
    rr = tuple(
        sum(1 for s in resolved if s is not None and s <= n) / len(episodes)
        for n in range(1, cap + 1)
    )
    return mstr, rr


def simulate_mstr_rr(records, tickets_by_id, pools, scorer, cap: int = STEP_CAP):
    """(mean steps to resolution, resolution-rate curve over 1..cap)."""
    return mstr_rr_from_episodes(run_episodes(records, tickets_by_id, pools, scorer, cap))


def distance_scores(sequence: tuple[str, ...]) -> dict[str, float]:
    """Per-group score 1/2^(steps before the resolver); off-sequence is 0."""
    m = len(sequence)
    return {g: 2.0 ** -(m - 1 - i) for i, g in enumerate(sequence)}


def madr_from_episodes(episodes, k: int) -> float:
    if k < 1:
        raise ValidationError(f"madr cutoff must be >= 1, got {k}")
    if not episodes:
        raise ValidationError("empty test set")
    scores = []
    for ep in episodes:
        phi = distance_scores(ep.ground_truth)
        seq = ep.simulated_sequence(k)
        if not seq:
            scores.append(0.0)
            continue
        scores.append(sum(phi.get(g, 0.0) for g in seq) / len(seq))
    return float(np.mean(scores))


def madr_eval(records, tickets_by_id, pools, scorer, k: int,
              cap: int = STEP_CAP) -> float:
    """Mean average distance-based rating at recommendation cutoff k."""
    return madr_from_episodes(run_episodes(records, tickets_by_id, pools, scorer, cap), k)


def build_loo_pools(records, candidate_groups, registry: GroupRegistry,
                    pool_size: int = LOO_POOL_SIZE, seed: int = 0) -> dict[str, tuple[str, ...]]:
    """Fixed per-ticket pools for the leave-one-out protocol.

    Each pool holds the resolver, the other archived groups, a seeded
    sample of the ticket's candidate set, then registry padding.
    """
    pools: dict[str, tuple[str, ...]] = {}
    for rec in records:
        seq = rec.sequence
        if pool_size < len(seq) + 1:
            raise ValidationError(
                f"ticket {rec.ticket_id!r}: pool size {pool_size} cannot hold "
                f"the archived sequence of length {len(seq)}")
        rng = random.Random(derive_seed(seed, f"loo:{rec.ticket_id}"))
        pool = [rec.resolver]
        chosen = {rec.resolver}
        for g in seq[:-1]:
            if g not in chosen:
                pool.append(g)
                chosen.add(g)
        extra = [g for g in candidate_groups[rec.ticket_id] if g not in chosen]
        take = min(len(extra), pool_size - len(pool))
        for g in rng.sample(extra, take):
            pool.append(g)
            chosen.add(g)
        if len(pool) < pool_size:
            rest = [g for g in registry.ids if g not in chosen]
            pool.extend(rng.sample(rest, min(len(rest), pool_size - len(pool))))
        pools[rec.ticket_id] = tuple(sorted(pool))
    return pools


def leave_one_out_hit_rate(records, tickets_by_id, pools, scorer,
                           ks=(1, 3, 5)) -> dict[int, float]:
    if not records:
        raise ValidationError("empty test set")
    hits = Counter()
    for rec in records:
        ranked = rank_step(tickets_by_id[rec.ticket_id], (), pools[rec.ticket_id],
                           scorer, max(ks))
        for k in ks:
            if rec.resolver in ranked[:k]:
                hits[k] += 1
    return {k: hits[k] / len(records) for k in ks}


@dataclass
class MetricsReport:
    """All metrics of one system on one test set."""

    system: str
    test_set: str
    mstr: float
    rr: tuple[float, ...]
    madr: tuple[float, ...]          # cutoffs 1..10
    hr: dict[int, float] | None      # leave-one-out; None for the human reference

    def __post_init__(self):
        assert all(b >= a - 1e-12 for a, b in zip(self.rr, self.rr[1:])), \
            "resolution-rate curve must be nondecreasing"
        assert 1.0 <= self.mstr <= STEP_CAP + 1e-9


def evaluate_system(system: str, records, tickets_by_id, pools, scorer,
                    test_set: str, loo_pools=None,
                    cap: int = STEP_CAP) -> MetricsReport:
    episodes = run_episodes(records, tickets_by_id, pools, scorer, cap)
    mstr, rr = mstr_rr_from_episodes(episodes, cap)
    madr = tuple(madr_from_episodes(episodes, k) for k in range(1, cap + 1))
    hr = None
    if loo_pools is not None:
        hr = leave_one_out_hit_rate(records, tickets_by_id, loo_pools, scorer)
    return MetricsReport(system, test_set, mstr, rr, madr, hr)


def human_reference(records, test_set: str, cap: int = STEP_CAP) -> MetricsReport:
    """Metrics of the archived routing itself."""
    if not records:
        raise ValidationError("empty test set")
    lengths = [min(len(r.sequence), cap) for r in records]
    mstr = float(np.mean(lengths))
    rr = tuple(sum(1 for m in lengths if m <= n) / len(records) for n in range(1, cap + 1))
    scores = []
    for rec in records:
        phi = distance_scores(rec.sequence)
        scores.append(sum(phi.values()) / len(rec.sequence))
    madr = tuple(float(np.mean(scores)) for _ in range(1, cap + 1))
    return MetricsReport(SYSTEM_HUMAN, test_set, mstr, rr, madr, None)


def build_test_sets(records, per_length: int = 100, max_length: int = 4,
                    seed: int = 0) -> dict[str, list[RoutingRecord]]:
    """Sampled held-out sets S1..S4, grouped by archived sequence length."""
    by_length: dict[int, list[RoutingRecord]] = {}
    for rec in records:
        by_length.setdefault(len(rec.sequence), []).append(rec)
    out: dict[str, list[RoutingRecord]] = {}
    for length in range(1, max_length + 1):
        available = sorted(by_length.get(length, []), key=lambda r: r.ticket_id)
        rng = random.Random(derive_seed(seed, f"testset:{length}"))
        if len(available) > per_length:
            available = sorted(rng.sample(available, per_length),
                               key=lambda r: r.ticket_id)
        if available:
            out[f"S{length}"] = available
    return out
