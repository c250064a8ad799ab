"""Entity language models, clarity scoring, retrieval scores, and embeddings.

Built from the training corpus only:

- a collection model: add-one-smoothed entity distribution P(e|C), inverse
  entity frequency IEF(e) = ln((N+1)/(df+1)) + 1, plus collection-level
  bigram and co-occurrence-window statistics;
- one profile per registry group, aggregating the entity multisets of the
  tickets that group resolved (groups that resolved nothing keep an empty,
  uniformly smoothed profile);
- an embedding provider, either trained here (positive-PMI entity
  co-occurrence within an 8-entity window, projected to a fixed dimension
  with a seeded Gaussian matrix) or loaded from a vector file.

Scoring follows retrieval conventions: clarity is the KL divergence in
bits between the Jelinek-Mercer-smoothed ticket distribution and P(e|C);
QLM and the sequential-dependence model use Dirichlet smoothing with mu
equal to the mean non-empty profile length; BM25 uses k1=1.2, b=0.75 with
profiles as documents. All scoring functions are pure.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import GroupRegistry, RoutingRecord, Ticket
from .errors import ParseError, ValidationError

JM_LAMBDA = 0.6
BM25_K1 = 1.2
BM25_B = 0.75
SDM_WEIGHTS = (0.85, 0.10, 0.05)
COOC_WINDOW = 8
EMBEDDING_DIM = 64


def _window_pairs(order):
    """Unordered entity pairs whose positions are within the co-occurrence window."""
    for i in range(len(order)):
        for j in range(i + 1, min(i + COOC_WINDOW, len(order))):
            a, b = order[i], order[j]
            yield (a, b) if a <= b else (b, a)


@dataclass
class CollectionModel:
    """Corpus-wide entity statistics; the background model for all scoring."""

    vocabulary: tuple[str, ...]
    counts: dict[str, int]
    total: int
    doc_freq: dict[str, int]
    n_tickets: int
    pair_counts: dict[tuple[str, str], int]
    pair_total: int
    window_counts: dict[tuple[str, str], int]
    window_total: int

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def p(self, entity: str) -> float:
        return (self.counts.get(entity, 0) + 1) / (self.total + self.vocab_size)

    def ief(self, entity: str) -> float:
        return math.log((self.n_tickets + 1) / (self.doc_freq.get(entity, 0) + 1)) + 1.0

    def p_pair(self, a: str, b: str) -> float:
        v2 = self.vocab_size ** 2
        return (self.pair_counts.get((a, b), 0) + 1) / (self.pair_total + v2)

    def p_window(self, a: str, b: str) -> float:
        key = (a, b) if a <= b else (b, a)
        v2 = self.vocab_size ** 2
        return (self.window_counts.get(key, 0) + 1) / (self.window_total + v2)


@dataclass
class GroupProfile:
    """Aggregated entity content of the tickets one group resolved."""

    group_id: str
    counts: dict[str, int]
    length: int
    n_resolved: int
    prior: float
    pair_counts: dict[tuple[str, str], int] = field(default_factory=dict)
    pair_total: int = 0
    window_counts: dict[tuple[str, str], int] = field(default_factory=dict)
    window_total: int = 0

    def p(self, entity: str, vocab_size: int) -> float:
        return (self.counts.get(entity, 0) + 1) / (self.length + vocab_size)


class EmbeddingProvider:
    """Entity vectors plus occurrence-weighted ticket averaging."""

    def __init__(self, dim: int, vectors: dict[str, np.ndarray], source: str):
        self.dim = dim
        self.source = source
        for e, v in vectors.items():
            if v.shape != (dim,):
                raise ValidationError(f"embedding for {e!r} has shape {v.shape}, want ({dim},)")
        self._vectors = vectors

    @classmethod
    def train(cls, tickets: list[Ticket], seed: int, dim: int = EMBEDDING_DIM) -> "EmbeddingProvider":
        vocab = sorted({e for t in tickets for e in t.entity_order})
        index = {e: i for i, e in enumerate(vocab)}
        n = len(vocab)
        cooc = np.zeros((n, n))
        for t in tickets:
            for a, b in _window_pairs(t.entity_order):
                cooc[index[a], index[b]] += 1.0
                cooc[index[b], index[a]] += 1.0
        total = cooc.sum()
        vectors: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        projection = rng.standard_normal((n, dim)) / math.sqrt(dim)
        if total > 0:
            row = cooc.sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                pmi = np.log(cooc * total / np.outer(row, row))
            pmi[~np.isfinite(pmi)] = 0.0
            np.maximum(pmi, 0.0, out=pmi)
            dense = pmi @ projection
        else:
            dense = np.zeros((n, dim))
        for e, i in index.items():
            vectors[e] = dense[i]
        return cls(dim, vectors, source="trained")

    @classmethod
    def from_file(cls, path) -> "EmbeddingProvider":
        path = Path(path)
        vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) < 2:
                    raise ParseError(str(path), line_no, "expected 'entity dim1 ... dimd'")
                try:
                    vec = np.array([float(x) for x in parts[1:]])
                except ValueError as exc:
                    raise ParseError(str(path), line_no, f"bad vector component: {exc}") from exc
                if dim is None:
                    dim = len(vec)
                elif len(vec) != dim:
                    raise ParseError(str(path), line_no,
                                     f"dimension {len(vec)} != first line's {dim}")
                if parts[0] in vectors:
                    raise ParseError(str(path), line_no, f"duplicate entity {parts[0]!r}")
                vectors[parts[0]] = vec
        if dim is None:
            raise ParseError(str(path), 1, "embedding file is empty")
        return cls(dim, vectors, source=str(path))

    def entity_vector(self, entity: str) -> np.ndarray | None:
        return self._vectors.get(entity)

    def ticket_vector(self, ticket: Ticket) -> np.ndarray:
        acc = np.zeros(self.dim)
        weight = 0.0
        for e, c in ticket.entities:
            v = self._vectors.get(e)
            if v is not None:
                acc += c * v
                weight += c
        return acc / weight if weight > 0 else acc

    def known(self, entity: str) -> bool:
        return entity in self._vectors


@dataclass
class TextModels:
    """Everything text-derived, bundled: built once from the training split."""

    collection: CollectionModel
    profiles: dict[str, GroupProfile]
    embeddings: EmbeddingProvider
    group_vectors: dict[str, np.ndarray]
    profile_df: dict[str, int]
    mu: float
    mu_pair: float
    mu_window: float
    avgdl: float

    def profile(self, group_id: str) -> GroupProfile:
        try:
            return self.profiles[group_id]
        except KeyError:
            raise ValidationError(f"unknown group {group_id!r}") from None


def build_models(tickets: list[Ticket], records: list[RoutingRecord],
                 registry: GroupRegistry, seed: int = 0,
                 embedding_path=None) -> TextModels:
    """Build collection model, group profiles, and embeddings from training data."""
    if not tickets or not records:
        raise ValidationError("cannot build text models from an empty training split")
    by_id = {t.id: t for t in tickets}
    for rec in records:
        if rec.ticket_id not in by_id:
            raise ValidationError(f"record references unknown ticket {rec.ticket_id!r}")
        if rec.resolver not in registry:
            raise ValidationError(f"unregistered resolver {rec.resolver!r}")

    counts: Counter = Counter()
    doc_freq: Counter = Counter()
    pair_counts: Counter = Counter()
    window_counts: Counter = Counter()
    for t in tickets:
        for e, c in t.entities:
            counts[e] += c
            doc_freq[e] += 1
        order = t.entity_order
        for a, b in zip(order, order[1:]):
            pair_counts[(a, b)] += 1
        for key in _window_pairs(order):
            window_counts[key] += 1
    collection = CollectionModel(
        vocabulary=tuple(sorted(counts)),
        counts=dict(counts),
        total=sum(counts.values()),
        doc_freq=dict(doc_freq),
        n_tickets=len(tickets),
        pair_counts=dict(pair_counts),
        pair_total=sum(pair_counts.values()),
        window_counts=dict(window_counts),
        window_total=sum(window_counts.values()),
    )

    resolved_by: dict[str, list[Ticket]] = {g: [] for g in registry.ids}
    for rec in records:
        resolved_by[rec.resolver].append(by_id[rec.ticket_id])

    profiles: dict[str, GroupProfile] = {}
    denom = len(records) + len(registry)
    for g in registry.ids:
        g_counts: Counter = Counter()
        g_pairs: Counter = Counter()
        g_windows: Counter = Counter()
        for t in resolved_by[g]:
            for e, c in t.entities:
                g_counts[e] += c
            order = t.entity_order
            for a, b in zip(order, order[1:]):
                g_pairs[(a, b)] += 1
            for key in _window_pairs(order):
                g_windows[key] += 1
        profiles[g] = GroupProfile(
            group_id=g,
            counts=dict(g_counts),
            length=sum(g_counts.values()),
            n_resolved=len(resolved_by[g]),
            prior=(len(resolved_by[g]) + 1) / denom,
            pair_counts=dict(g_pairs),
            pair_total=sum(g_pairs.values()),
            window_counts=dict(g_windows),
            window_total=sum(g_windows.values()),
        )

    profile_df: Counter = Counter()
    for p in profiles.values():
        for e in p.counts:
            profile_df[e] += 1

    def mean_nonempty(values):
        nonempty = [v for v in values if v > 0]
        return sum(nonempty) / len(nonempty) if nonempty else 1.0

    mu = mean_nonempty(p.length for p in profiles.values())
    mu_pair = mean_nonempty(p.pair_total for p in profiles.values())
    mu_window = mean_nonempty(p.window_total for p in profiles.values())
    avgdl = mean_nonempty(p.length for p in profiles.values())

    if embedding_path is not None:
        embeddings = EmbeddingProvider.from_file(embedding_path)
    else:
        embeddings = EmbeddingProvider.train(tickets, seed=seed)
    group_vectors = {}
    for g in registry.ids:
        if resolved_by[g]:
            group_vectors[g] = np.mean(
                [embeddings.ticket_vector(t) for t in resolved_by[g]], axis=0)
        else:
            group_vectors[g] = np.zeros(embeddings.dim)

    return TextModels(collection, profiles, embeddings, group_vectors,
                      profile_df=dict(profile_df),
                      mu=mu, mu_pair=mu_pair, mu_window=mu_window, avgdl=avgdl)


def clarity(ticket: Ticket, collection: CollectionModel, lam: float = JM_LAMBDA) -> float:
    """KL divergence in bits between the smoothed ticket and collection models.

    The ticket model is lam * ML(e|ticket) + (1 - lam) * P(e|C); off-ticket
    entities therefore contribute a closed-form tail instead of a full
    vocabulary scan.
    """
    if not ticket.entities:
        raise ValidationError(f"ticket {ticket.id!r} has no entities")
    total = ticket.entity_count
    score = 0.0
    mass_in_ticket = 0.0
    for e, c in ticket.entities:
        p_c = collection.p(e)
        p_t = lam * (c / total) + (1.0 - lam) * p_c
        mass_in_ticket += p_c
        if p_t > 0:
            score += p_t * math.log2(p_t / p_c)
    if lam < 1.0:
        # Entities outside the ticket all shrink by the same factor (1 - lam).
        score += (1.0 - lam) * math.log2(1.0 - lam) * (1.0 - mass_in_ticket)
    return score


def ticket_block(ticket: Ticket, collection: CollectionModel) -> tuple[float, ...]:
    """Raw T features: token count, clarity, occurrences, density, IEF sum."""
    occurrences = ticket.entity_count
    return (
        float(ticket.length),
        clarity(ticket, collection),
        float(occurrences),
        occurrences / ticket.length if ticket.length else 0.0,
        sum(collection.ief(e) for e in ticket.entity_order),
    )


def relevance_scores(ticket: Ticket, group_id: str,
                     models: TextModels) -> tuple[float, float, float, float]:
    """(QLM, BM25, SDM, log P(g|ticket)) of one candidate group."""
    profile = models.profile(group_id)
    collection = models.collection
    vocab = collection.vocab_size

    qlm = 0.0
    for e, c in ticket.entities:
        smoothed = (profile.counts.get(e, 0) + models.mu * collection.p(e)) / \
                   (profile.length + models.mu)
        qlm += c * math.log(smoothed)

    bm25 = 0.0
    n_docs = len(models.profiles)
    for e, c in ticket.entities:
        tf = profile.counts.get(e, 0)
        if tf == 0:
            continue
        df_e = models.profile_df.get(e, 0)
        idf = math.log(1.0 + (n_docs - df_e + 0.5) / (df_e + 0.5))
        norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * profile.length / models.avgdl)
        bm25 += c * idf * tf * (BM25_K1 + 1.0) / norm

    order = ticket.entity_order
    f_t = sum(
        math.log((profile.counts.get(e, 0) + models.mu * collection.p(e))
                 / (profile.length + models.mu))
        for e in order
    )
    f_o = sum(
        math.log((profile.pair_counts.get((a, b), 0) + models.mu_pair * collection.p_pair(a, b))
                 / (profile.pair_total + models.mu_pair))
        for a, b in zip(order, order[1:])
    )
    f_u = 0.0
    for a, b in _window_pairs(order):
        f_u += math.log((profile.window_counts.get((a, b), 0)
                         + models.mu_window * collection.p_window(a, b))
                        / (profile.window_total + models.mu_window))
    sdm = SDM_WEIGHTS[0] * f_t + SDM_WEIGHTS[1] * f_o + SDM_WEIGHTS[2] * f_u

    log_p_g = math.log(profile.prior)
    for e in order:
        log_p_g += math.log(profile.p(e, vocab))

    return qlm, bm25, sdm, log_p_g


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-15 or nb < 1e-15:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def similarity_scores(ticket: Ticket, group_id: str,
                      models: TextModels) -> tuple[float, float, float]:
    """(entity-count cosine, embedding cosine, embedding distance) vs one group."""
    profile = models.profile(group_id)
    t_counts = ticket.entity_counts()
    dot = sum(c * profile.counts.get(e, 0) for e, c in t_counts.items())
    nt = math.sqrt(sum(c * c for c in t_counts.values()))
    ng = math.sqrt(sum(c * c for c in profile.counts.values()))
    cos_ent = dot / (nt * ng) if nt > 0 and ng > 0 else 0.0

    t_vec = models.embeddings.ticket_vector(ticket)
    g_vec = models.group_vectors[group_id]
    cos_emb = _cosine(t_vec, g_vec)
    distance = float(np.linalg.norm(t_vec - g_vec))
    return cos_ent, cos_emb, distance
