"""The 35-slot feature vector for (ticket, current sequence, candidate) triplets.

Slot order is frozen and published as FEATURE_NAMES; models are trained
against a hash of that schema so a stored model refuses mismatched vectors.

Blocks:

- T (5): ticket-only statistics from the collection model;
- G (19): candidate-only statistics: log role priors, resolved-ticket
  count, and the fifteen graph measures of the resolver-distance network;
- TG (7): ticket-candidate affinity: conditional probability, two cosines,
  embedding distance, and the three retrieval scores;
- GG (4): sequence-candidate transition statistics: sequence length,
  first-order and variable-order transition probabilities, and the
  resolver collocation rate.

GG conventions: the first-order probability reads the transfer network
directly (unsmoothed); the variable-order probability takes the best
add-one-smoothed estimate over the contiguous suffixes of length <= 2;
the collocation rate is the fraction of training tickets sharing at least
one group with the sequence that were resolved by the candidate. An empty
sequence falls back to the resolver prior for all three probabilities.

Values are min-max normalized to [0, 1] with bounds fitted on training
instances only; out-of-range inference values clamp, and degenerate slots
(constant on the training set) map to 0.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import GroupRegistry, RoutingRecord, Ticket
from .errors import ValidationError
from .groupnet import (
    CENTRALITY_MEASURES,
    CentralityTable,
    GroupPriors,
    RoutingNetwork,
    build_networks,
    compute_centralities,
    compute_priors,
)
from .textmodels import TextModels, build_models, relevance_scores, similarity_scores, ticket_block

SCHEMA_VERSION = "1"

T_FEATURES = (
    "t_token_count", "t_clarity", "t_entity_occurrences", "t_entity_ratio", "t_ief_sum",
)
G_FEATURES = (
    "g_log_p_participant", "g_log_p_initial", "g_log_p_resolver", "g_resolved_count",
) + tuple(f"g_{m}" for m in CENTRALITY_MEASURES)
TG_FEATURES = (
    "tg_log_p_group_given_ticket", "tg_cos_entities", "tg_cos_embedding",
    "tg_emb_distance", "tg_qlm", "tg_bm25", "tg_sdm",
)
GG_FEATURES = ("gg_sequence_length", "gg_p_fms", "gg_p_vms", "gg_p_coll")

FEATURE_NAMES: tuple[str, ...] = T_FEATURES + G_FEATURES + TG_FEATURES + GG_FEATURES
N_FEATURES = len(FEATURE_NAMES)

BLOCKS: dict[str, tuple[str, ...]] = {
    "T": T_FEATURES, "G": G_FEATURES, "TG": TG_FEATURES, "GG": GG_FEATURES,
}


def schema_hash() -> str:
    """Digest of the frozen slot schema; stored with trained models."""
    text = f"v{SCHEMA_VERSION}:" + ",".join(FEATURE_NAMES)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def block_slots(block: str) -> list[int]:
    if block not in BLOCKS:
        raise ValidationError(f"unknown feature block {block!r}; have {sorted(BLOCKS)}")
    return [FEATURE_NAMES.index(name) for name in BLOCKS[block]]


class TransitionStats:
    """Counts over training sequences backing the GG features."""

    def __init__(self, records: list[RoutingRecord], registry: GroupRegistry,
                 priors: GroupPriors, transfer: RoutingNetwork):
        self.registry = registry
        self.priors = priors
        self.transfer = transfer
        self.n_groups = len(registry)

        self._ctx1: dict[tuple[str], dict[str, int]] = {}
        self._ctx1_total: dict[tuple[str], int] = {}
        self._ctx2: dict[tuple[str, str], dict[str, int]] = {}
        self._ctx2_total: dict[tuple[str, str], int] = {}
        for rec in records:
            seq = rec.sequence
            for i in range(1, len(seq)):
                c1 = (seq[i - 1],)
                self._ctx1.setdefault(c1, {}).setdefault(seq[i], 0)
                self._ctx1[c1][seq[i]] += 1
                self._ctx1_total[c1] = self._ctx1_total.get(c1, 0) + 1
                if i >= 2:
                    c2 = (seq[i - 2], seq[i - 1])
                    self._ctx2.setdefault(c2, {}).setdefault(seq[i], 0)
                    self._ctx2[c2][seq[i]] += 1
                    self._ctx2_total[c2] = self._ctx2_total.get(c2, 0) + 1

        # Ticket membership as bitmasks, so collocation is two popcounts.
        self._member_mask: dict[str, int] = {g: 0 for g in registry.ids}
        self._resolver_mask: dict[str, int] = {g: 0 for g in registry.ids}
        for i, rec in enumerate(records):
            bit = 1 << i
            for g in set(rec.sequence):
                self._member_mask[g] |= bit
            self._resolver_mask[rec.resolver] |= bit

    def _smoothed(self, ctx, counts, totals, g: str) -> float:
        c = counts.get(ctx, {}).get(g, 0)
        t = totals.get(ctx, 0)
        return (c + 1) / (t + self.n_groups)

    def features(self, sequence: tuple[str, ...], candidate: str) -> tuple[float, ...]:
        if candidate not in self.registry:
            raise ValidationError(f"unknown candidate group {candidate!r}")
        if candidate in sequence:
            raise ValidationError(
                f"candidate {candidate!r} already appears in the routing sequence")
        if not sequence:
            p = self.priors.resolver[candidate]
            return (0.0, p, p, p)

        fms = max(self.transfer.weight(g_r, candidate) for g_r in set(sequence))

        vms = self._smoothed((sequence[-1],), self._ctx1, self._ctx1_total, candidate)
        if len(sequence) >= 2:
            vms = max(vms, self._smoothed(tuple(sequence[-2:]),
                                          self._ctx2, self._ctx2_total, candidate))

        overlap = 0
        for g in set(sequence):
            overlap |= self._member_mask.get(g, 0)
        denom = overlap.bit_count()
        coll = (overlap & self._resolver_mask[candidate]).bit_count() / denom if denom else 0.0

        return (float(len(sequence)), fms, vms, coll)


def transition_features(sequence, candidate: str, stats: TransitionStats) -> tuple[float, ...]:
    return stats.features(tuple(sequence), candidate)


@dataclass
class NormalizationTable:
    """Per-slot (min, max) fitted on training vectors; degenerate slots -> 0."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "NormalizationTable":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != N_FEATURES or matrix.shape[0] == 0:
            raise ValidationError(
                f"normalization expects a non-empty (n, {N_FEATURES}) matrix, "
                f"got shape {matrix.shape}")
        return cls(lo=matrix.min(axis=0), hi=matrix.max(axis=0))

    def transform(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        out = (raw - self.lo) / safe
        out = np.where(span > 0, out, 0.0)
        return np.clip(out, 0.0, 1.0)

    def to_json(self, path) -> None:
        data = {
            "schema_version": SCHEMA_VERSION,
            "schema_hash": schema_hash(),
            "features": {
                name: {"min": float(self.lo[i]), "max": float(self.hi[i])}
                for i, name in enumerate(FEATURE_NAMES)
            },
        }
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, path) -> "NormalizationTable":
        data = json.loads(Path(path).read_text())
        if data.get("schema_hash") != schema_hash():
            raise ValidationError("normalization table was fitted for a different schema")
        lo = np.array([data["features"][n]["min"] for n in FEATURE_NAMES])
        hi = np.array([data["features"][n]["max"] for n in FEATURE_NAMES])
        return cls(lo, hi)


@dataclass
class FeaturePipeline:
    """All fitted models needed to turn a triplet into a feature vector."""

    models: TextModels
    priors: GroupPriors
    transfer: RoutingNetwork
    resolver_net: RoutingNetwork
    root_net: RoutingNetwork
    centralities: CentralityTable
    transitions: TransitionStats
    normalization: NormalizationTable | None = None
    _g_rows: dict[str, tuple[float, ...]] = field(default_factory=dict, repr=False)
    _t_cache: dict[Ticket, tuple[float, ...]] = field(default_factory=dict, repr=False)
    _tg_cache: dict[tuple[Ticket, str], tuple[float, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for g in self.priors.initial:
            self._g_rows[g] = (
                math.log(self.priors.participant[g]),
                math.log(self.priors.initial[g]),
                math.log(self.priors.resolver[g]),
                float(self.priors.resolver_counts[g]),
                *self.centralities.row(g),
            )

    @classmethod
    def build(cls, tickets: list[Ticket], records: list[RoutingRecord],
              registry: GroupRegistry, seed: int = 0, embedding_path=None) -> "FeaturePipeline":
        models = build_models(tickets, records, registry, seed=seed,
                              embedding_path=embedding_path)
        priors = compute_priors(records, registry)
        transfer, resolver_net, root_net = build_networks(records, registry)
        centralities = compute_centralities(resolver_net)
        transitions = TransitionStats(records, registry, priors, transfer)
        return cls(models, priors, transfer, resolver_net, root_net,
                   centralities, transitions)

    def _t_block(self, ticket: Ticket) -> tuple[float, ...]:
        block = self._t_cache.get(ticket)
        if block is None:
            block = ticket_block(ticket, self.models.collection)
            self._t_cache[ticket] = block
        return block

    def _tg_block(self, ticket: Ticket, g: str) -> tuple[float, ...]:
        key = (ticket, g)
        block = self._tg_cache.get(key)
        if block is None:
            qlm, bm25, sdm, log_p = relevance_scores(ticket, g, self.models)
            cos_ent, cos_emb, dist = similarity_scores(ticket, g, self.models)
            block = (log_p, cos_ent, cos_emb, dist, qlm, bm25, sdm)
            self._tg_cache[key] = block
        return block

    def raw_vector(self, ticket: Ticket, sequence, candidate: str) -> np.ndarray:
        if candidate not in self._g_rows:
            raise ValidationError(f"unknown candidate group {candidate!r}")
        gg = self.transitions.features(tuple(sequence), candidate)
        return np.array(
            self._t_block(ticket) + self._g_rows[candidate]
            + self._tg_block(ticket, candidate) + gg
        )

    def vector(self, ticket: Ticket, sequence, candidate: str) -> np.ndarray:
        if self.normalization is None:
            raise ValidationError("normalization table not fitted; "
                                  "build the training set first")
        return self.normalization.transform(self.raw_vector(ticket, sequence, candidate))

    def matrix(self, triplets, normalized: bool = True) -> np.ndarray:
        rows = [self.raw_vector(t, s, g) for t, s, g in triplets]
        raw = np.array(rows) if rows else np.zeros((0, N_FEATURES))
        if not normalized:
            return raw
        if self.normalization is None:
            raise ValidationError("normalization table not fitted; "
                                  "build the training set first")
        return self.normalization.transform(raw)


def mask_blocks(matrix: np.ndarray, removed_blocks) -> np.ndarray:
    """Zero out the slots of the named blocks; keeps the 35-column layout."""
    out = np.array(matrix, dtype=float, copy=True)
    for block in removed_blocks:
        out[:, block_slots(block)] = 0.0
    return out


def write_feature_csv(path, rows, matrix: np.ndarray) -> None:
    """rows: (ticket_id, step, group_id, label) per matrix row."""
    matrix = np.asarray(matrix)
    if len(rows) != matrix.shape[0]:
        raise ValidationError(f"{len(rows)} rows but matrix has {matrix.shape[0]}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ticket_id", "step", "group_id", "label", *FEATURE_NAMES])
        for (tid, step, gid, label), vec in zip(rows, matrix):
            writer.writerow([tid, step, gid, f"{label:.12g}"]
                            + [f"{x:.12g}" for x in vec])
