"""Candidate-group generation: root prediction plus neighbor expansion.

A ticket's resolver root is predicted by retrieval: training tickets are
indexed over their entities with TF-IDF weights, the query ticket pulls
its top-100 most similar tickets by cosine, and their resolver roots
vote. The predicted root is then expanded with its strongest n outgoing
neighbors in the root-level network, and the candidate set is every
registry group under those roots.

Ties anywhere (vote counts, edge weights, cosine scores) break
lexicographically on id so candidate generation is deterministic.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

from .corpus import GroupRegistry, RoutingRecord, Ticket
from .errors import ValidationError
from .groupnet import RoutingNetwork

TOP_SIMILAR = 100
DEFAULT_NEIGHBORS = 10


@dataclass
class TicketIndex:
    """Inverted TF-IDF index over training tickets, with resolver roots."""

    postings: dict[str, tuple[tuple[str, int], ...]]  # entity -> ((ticket_id, count), ...)
    idf: dict[str, float]
    norms: dict[str, float]
    resolver_root: dict[str, str]
    fallback_root: str

    @property
    def n_tickets(self) -> int:
        return len(self.norms)


def build_index(tickets: list[Ticket], records: list[RoutingRecord],
                registry: GroupRegistry) -> TicketIndex:
    """Index the training tickets; every indexed ticket must have a record."""
    by_id = {t.id: t for t in tickets}
    resolver_root: dict[str, str] = {}
    for rec in records:
        if rec.ticket_id in by_id:
            resolver_root[rec.ticket_id] = registry.root_of(rec.resolver)
    indexed = [by_id[tid] for tid in sorted(resolver_root)]
    if not indexed:
        raise ValidationError("no training tickets with routing records to index")

    df: Counter = Counter()
    for t in indexed:
        for e in t.entity_order:
            df[e] += 1
    n = len(indexed)
    idf = {e: math.log((n + 1) / (d + 1)) + 1.0 for e, d in df.items()}

    postings: dict[str, list[tuple[str, int]]] = {}
    norms: dict[str, float] = {}
    for t in indexed:
        sq = 0.0
        for e, c in t.entities:
            postings.setdefault(e, []).append((t.id, c))
            sq += (c * idf[e]) ** 2
        norms[t.id] = math.sqrt(sq)

    root_votes = Counter(resolver_root.values())
    fallback = min(root_votes, key=lambda r: (-root_votes[r], r))
    return TicketIndex(
        postings={e: tuple(p) for e, p in postings.items()},
        idf=idf,
        norms=norms,
        resolver_root=resolver_root,
        fallback_root=fallback,
    )


def _top_similar(ticket: Ticket, index: TicketIndex, k: int) -> list[str]:
    scores: dict[str, float] = {}
    q_sq = 0.0
    for e, c in ticket.entities:
        w_idf = index.idf.get(e)
        if w_idf is None:
            continue
        q_w = c * w_idf
        q_sq += q_w * q_w
        for tid, d_c in index.postings[e]:
            scores[tid] = scores.get(tid, 0.0) + q_w * d_c * w_idf
    if not scores:
        return []
    q_norm = math.sqrt(q_sq)
    ranked = sorted(scores,
                    key=lambda tid: (-scores[tid] / (q_norm * index.norms[tid]), tid))
    return ranked[:k]


def predict_root(ticket: Ticket, index: TicketIndex) -> str:
    """Majority resolver root among the most similar training tickets."""
    neighbors = _top_similar(ticket, index, TOP_SIMILAR)
    if not neighbors:
        return index.fallback_root
    votes = Counter(index.resolver_root[tid] for tid in neighbors)
    return min(votes, key=lambda r: (-votes[r], r))


@dataclass
class CandidateSet:
    predicted_root: str
    roots: tuple[str, ...]
    groups: tuple[str, ...]

    def __contains__(self, group_id: str) -> bool:
        return group_id in self._group_set

    def __post_init__(self):
        self._group_set = frozenset(self.groups)


def generate_candidates(ticket: Ticket, n: int, root_net: RoutingNetwork,
                        index: TicketIndex, registry: GroupRegistry) -> CandidateSet:
    """Predicted root plus its top-n out-neighbors, flattened to leaf groups."""
    if n < 0:
        raise ValidationError(f"neighbor count must be >= 0, got {n}")
    predicted = predict_root(ticket, index)
    out = root_net.out_edges(predicted)
    neighbors = sorted(out, key=lambda r: (-out[r], r))[:n]
    roots = (predicted, *neighbors)
    groups: list[str] = []
    for r in roots:
        groups.extend(registry.groups_under_root(r))
    return CandidateSet(predicted, roots, tuple(sorted(groups)))


def write_candidates_jsonl(path, entries) -> None:
    """entries: iterable of (ticket_id, CandidateSet); one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for tid, cs in entries:
            obj = {"ticket_id": tid, "predicted_root": cs.predicted_root,
                   "roots": list(cs.roots), "groups": list(cs.groups)}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
