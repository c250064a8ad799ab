"""Routing networks over expert groups, and the statistics derived from them.

Three directed graphs are built from archived routing sequences:

- transfer network: edge (a, b) weighted by the fraction of a's outgoing
  transfers that went to b;
- resolver network: every group in a sequence is linked straight to that
  sequence's resolver, with contribution 1 for the immediate predecessor
  and halved for each step further back (the sequence A -> B -> C yields
  raw contributions {(A, C): 0.5, (B, C): 1.0});
- root network: the resolver network aggregated to hierarchy roots, with
  same-root self-loops dropped.

Raw contributions are summed across tickets and kept alongside per-source
normalized weights, so edge weights remain comparable across the networks.

All node sets equal the full registry (isolated groups stay as nodes), and
all distance-based measures use outgoing hop counts; unreachable targets
contribute nothing. Centralities are computed with plain power iterations
and Brandes' shortest-path accumulation, so results are deterministic and
carry no dependence on graph-library version behavior.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats
from sklearn.cluster import KMeans

from .corpus import GroupRegistry, RoutingRecord
from .errors import ValidationError

DISPATCH = "<dispatch>"

KIND_TRANSFER = "transfer"
KIND_RESOLVER = "resolver-distance"
KIND_ROOT = "root-level"


@dataclass
class RoutingNetwork:
    kind: str
    nodes: tuple[str, ...]
    edges: dict[str, dict[str, float]]      # src -> dst -> normalized weight
    raw_edges: dict[str, dict[str, float]]  # src -> dst -> summed raw contribution

    def __post_init__(self):
        self._in: dict[str, dict[str, float]] = {n: {} for n in self.nodes}
        for src, dsts in self.edges.items():
            for dst, w in dsts.items():
                self._in[dst][src] = w

    @classmethod
    def from_raw(cls, kind: str, nodes, raw: dict[str, dict[str, float]]) -> "RoutingNetwork":
        nodes = tuple(sorted(nodes))
        edges: dict[str, dict[str, float]] = {}
        for src in nodes:
            dsts = raw.get(src, {})
            total = sum(dsts.values())
            if total > 0:
                edges[src] = {dst: w / total for dst, w in sorted(dsts.items())}
        raw_sorted = {src: dict(sorted(raw[src].items())) for src in sorted(raw)}
        return cls(kind, nodes, edges, raw_sorted)

    def out_edges(self, src: str) -> dict[str, float]:
        return self.edges.get(src, {})

    def in_edges(self, dst: str) -> dict[str, float]:
        return self._in.get(dst, {})

    def weight(self, src: str, dst: str) -> float:
        return self.edges.get(src, {}).get(dst, 0.0)

    def raw_weight(self, src: str, dst: str) -> float:
        return self.raw_edges.get(src, {}).get(dst, 0.0)

    @property
    def n_edges(self) -> int:
        return sum(len(d) for d in self.edges.values())

    def write_edge_list(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for src in self.nodes:
                for dst, w in self.out_edges(src).items():
                    fh.write(f"{src} {dst} {w:.12g}\n")


def _check_registered(records, registry: GroupRegistry) -> None:
    for rec in records:
        for g in rec.sequence:
            if g not in registry:
                raise ValidationError(f"record {rec.ticket_id!r}: unregistered group {g!r}")


def build_networks(records: list[RoutingRecord], registry: GroupRegistry):
    """Build (transfer, resolver, root) networks from archived sequences."""
    _check_registered(records, registry)

    transfer_raw: dict[str, dict[str, float]] = {}
    resolver_raw: dict[str, dict[str, float]] = {}
    for rec in records:
        seq = rec.sequence
        for a, b in zip(seq, seq[1:]):
            transfer_raw.setdefault(a, Counter())[b] += 1.0
        m = len(seq)
        for i in range(m - 1):
            # Immediate predecessor contributes 1, halved per extra step back.
            resolver_raw.setdefault(seq[i], Counter())[seq[m - 1]] += 2.0 ** -(m - 2 - i)

    root_raw: dict[str, dict[str, float]] = {}
    for src, dsts in resolver_raw.items():
        src_root = registry.root_of(src)
        for dst, w in dsts.items():
            dst_root = registry.root_of(dst)
            if src_root == dst_root:
                continue
            root_raw.setdefault(src_root, Counter())[dst_root] += w

    transfer = RoutingNetwork.from_raw(KIND_TRANSFER, registry.ids, transfer_raw)
    resolver = RoutingNetwork.from_raw(KIND_RESOLVER, registry.ids, resolver_raw)
    root = RoutingNetwork.from_raw(KIND_ROOT, registry.roots, root_raw)
    return transfer, resolver, root


@dataclass
class GroupPriors:
    """Smoothed role priors per group: (count + 1) / (tickets + groups)."""

    n_tickets: int
    n_groups: int
    initial_counts: dict[str, int]
    resolver_counts: dict[str, int]
    participant_counts: dict[str, int]
    initial: dict[str, float]
    resolver: dict[str, float]
    participant: dict[str, float]

    def log_initial(self, g: str) -> float:
        return math.log(self.initial[g])

    def log_resolver(self, g: str) -> float:
        return math.log(self.resolver[g])

    def log_participant(self, g: str) -> float:
        return math.log(self.participant[g])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "p_initial", "p_resolver", "p_participant"])
            for g in sorted(self.initial):
                writer.writerow([g, f"{self.initial[g]:.12g}",
                                 f"{self.resolver[g]:.12g}", f"{self.participant[g]:.12g}"])


def compute_priors(records: list[RoutingRecord], registry: GroupRegistry) -> GroupPriors:
    _check_registered(records, registry)
    initial = Counter(rec.initial for rec in records)
    resolver = Counter(rec.resolver for rec in records)
    participant: Counter = Counter()
    for rec in records:
        for g in set(rec.sequence):
            participant[g] += 1
    n_t, n_g = len(records), len(registry)
    denom = n_t + n_g

    def smooth(counts):
        return {g: (counts.get(g, 0) + 1) / denom for g in registry.ids}

    return GroupPriors(
        n_tickets=n_t,
        n_groups=n_g,
        initial_counts={g: initial.get(g, 0) for g in registry.ids},
        resolver_counts={g: resolver.get(g, 0) for g in registry.ids},
        participant_counts={g: participant.get(g, 0) for g in registry.ids},
        initial=smooth(initial),
        resolver=smooth(resolver),
        participant=smooth(participant),
    )


CENTRALITY_MEASURES = (
    "in_degree", "out_degree", "degree",
    "weighted_in_degree", "weighted_out_degree", "weighted_degree",
    "harmonic", "closeness", "betweenness",
    "eigenvector", "pagerank", "hub", "authority",
    "clustering", "eccentricity",
)


@dataclass
class CentralityTable:
    nodes: tuple[str, ...]
    values: dict[str, dict[str, float]]  # measure -> node -> value

    def value(self, measure: str, node: str) -> float:
        return self.values[measure][node]

    def row(self, node: str) -> tuple[float, ...]:
        return tuple(self.values[m][node] for m in CENTRALITY_MEASURES)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", *CENTRALITY_MEASURES])
            for n in self.nodes:
                writer.writerow([n] + [f"{self.values[m][n]:.12g}" for m in CENTRALITY_MEASURES])


def _bfs_distances(adj: list[list[int]], source: int, n: int) -> list[int]:
    dist = [-1] * n
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _brandes_betweenness(adj: list[list[int]], n: int) -> list[float]:
    bc = [0.0] * n
    for s in range(n):
        stack: list[int] = []
        preds: list[list[int]] = [[] for _ in range(n)]
        sigma = [0.0] * n
        sigma[s] = 1.0
        dist = [-1] * n
        dist[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            stack.append(u)
            for v in adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
                if dist[v] == dist[u] + 1:
                    sigma[v] += sigma[u]
                    preds[v].append(u)
        delta = [0.0] * n
        while stack:
            w = stack.pop()
            for u in preds[w]:
                delta[u] += sigma[u] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


def _pagerank(weights: np.ndarray, damping: float = 0.85,
              tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
    n = weights.shape[0]
    out_sum = weights.sum(axis=1)
    dangling = out_sum <= 0
    trans = np.zeros_like(weights)
    nonzero = ~dangling
    trans[nonzero] = weights[nonzero] / out_sum[nonzero, None]
    rank = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        dangling_mass = rank[dangling].sum()
        new = (1 - damping) / n + damping * (rank @ trans + dangling_mass / n)
        if np.abs(new - rank).sum() < tol:
            rank = new
            break
        rank = new
    return rank


def _eigenvector(weights: np.ndarray, tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
    n = weights.shape[0]
    x = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(max_iter):
        new = x @ weights  # accumulate along incoming edges
        norm = np.linalg.norm(new)
        if norm < 1e-15:
            return np.zeros(n)
        new = new / norm
        if np.abs(new - x).max() < tol:
            return new
        x = new
    return x


def _hits(weights: np.ndarray, tol: float = 1e-9, max_iter: int = 200):
    n = weights.shape[0]
    hub = np.full(n, 1.0 / n)
    auth = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        new_auth = hub @ weights
        s = new_auth.sum()
        if s < 1e-15:
            return np.zeros(n), np.zeros(n)
        new_auth /= s
        new_hub = weights @ new_auth
        s = new_hub.sum()
        if s < 1e-15:
            return np.zeros(n), np.zeros(n)
        new_hub /= s
        if np.abs(new_auth - auth).max() < tol and np.abs(new_hub - hub).max() < tol:
            return new_hub, new_auth
        hub, auth = new_hub, new_auth
    return hub, auth


def compute_centralities(network: RoutingNetwork) -> CentralityTable:
    """All per-node graph measures used as group features."""
    nodes = network.nodes
    n = len(nodes)
    if n == 0:
        raise ValidationError("cannot compute centralities of an empty graph")
    index = {g: i for i, g in enumerate(nodes)}

    adj: list[list[int]] = [[] for _ in range(n)]
    weights = np.zeros((n, n))
    for src in nodes:
        for dst, w in network.out_edges(src).items():
            adj[index[src]].append(index[dst])
            weights[index[src], index[dst]] = w
    radj: list[list[int]] = [[] for _ in range(n)]
    for u in range(n):
        for v in adj[u]:
            radj[v].append(u)

    in_deg = [float(len(radj[i])) for i in range(n)]
    out_deg = [float(len(adj[i])) for i in range(n)]
    w_in = weights.sum(axis=0)
    w_out = weights.sum(axis=1)

    harmonic = [0.0] * n
    closeness = [0.0] * n
    eccentricity = [0.0] * n
    for i in range(n):
        dist = _bfs_distances(adj, i, n)
        reached = [d for d in dist if d > 0]
        harmonic[i] = sum(1.0 / d for d in reached)
        if reached:
            closeness[i] = len(reached) / sum(reached)
            eccentricity[i] = float(max(reached))

    betweenness = _brandes_betweenness(adj, n)
    pagerank = _pagerank(weights)
    eigenvector = _eigenvector(weights)
    hub, auth = _hits(weights)

    clustering = [0.0] * n
    und: list[set[int]] = [set(adj[i]) | set(radj[i]) for i in range(n)]
    for i in range(n):
        neigh = sorted(und[i] - {i})
        k = len(neigh)
        if k < 2:
            continue
        links = 0
        for a_idx, a in enumerate(neigh):
            for b in neigh[a_idx + 1:]:
                if b in und[a]:
                    links += 1
        clustering[i] = 2.0 * links / (k * (k - 1))

    columns = {
        "in_degree": in_deg, "out_degree": out_deg,
        "degree": [a + b for a, b in zip(in_deg, out_deg)],
        "weighted_in_degree": w_in.tolist(), "weighted_out_degree": w_out.tolist(),
        "weighted_degree": (w_in + w_out).tolist(),
        "harmonic": harmonic, "closeness": closeness, "betweenness": betweenness,
        "eigenvector": eigenvector.tolist(), "pagerank": pagerank.tolist(),
        "hub": hub.tolist(), "authority": auth.tolist(),
        "clustering": clustering, "eccentricity": eccentricity,
    }
    values = {m: {nodes[i]: float(col[i]) for i in range(n)} for m, col in columns.items()}
    return CentralityTable(nodes, values)


@dataclass
class FidelityClusters:
    """Resolver source profiles clustered into high / medium / low fidelity."""

    level: str
    distributions: dict[str, tuple[float, ...]]
    centers: list[tuple[float, ...]]
    labels: dict[str, str]


@dataclass
class FidelityReport:
    leaf: FidelityClusters
    root: FidelityClusters | None
    role_moments: dict[str, tuple[float, float]]  # role -> (skewness, kurtosis)


def _source_distributions(records) -> dict[str, tuple[float, ...]]:
    sources: dict[str, Counter] = {}
    for rec in records:
        resolver = rec.sequence[-1]
        source = rec.sequence[-2] if len(rec.sequence) > 1 else DISPATCH
        sources.setdefault(resolver, Counter())[source] += 1
    dists: dict[str, tuple[float, ...]] = {}
    for resolver, counts in sorted(sources.items()):
        total = sum(counts.values())
        dispatch = counts.get(DISPATCH, 0) / total
        rest = sorted((c / total for s, c in counts.items() if s != DISPATCH), reverse=True)
        dists[resolver] = (dispatch, *rest)
    return dists


def _cluster(distributions: dict[str, tuple[float, ...]], level: str,
             seed: int, restarts: int) -> FidelityClusters:
    if len(distributions) < 3:
        raise ValidationError(f"need at least 3 resolver groups at {level} level, "
                              f"got {len(distributions)}")
    width = max(len(d) for d in distributions.values())
    names = sorted(distributions)
    matrix = np.zeros((len(names), width))
    for i, name in enumerate(names):
        d = distributions[name][:width]
        matrix[i, :len(d)] = d
    km = KMeans(n_clusters=3, n_init=restarts, random_state=seed)
    assignment = km.fit_predict(matrix)
    # Rank clusters by how much of their mass comes straight from dispatch:
    # a dominant dispatch share is the high-fidelity signature, a dominant
    # non-dispatch source the low-fidelity one.
    order = np.argsort(-km.cluster_centers_[:, 0])
    label_of = {int(order[0]): "high", int(order[1]): "medium", int(order[2]): "low"}
    padded = {name: tuple(matrix[i]) for i, name in enumerate(names)}
    centers = [tuple(km.cluster_centers_[int(c)]) for c in order]
    labels = {name: label_of[int(a)] for name, a in zip(names, assignment)}
    return FidelityClusters(level, padded, centers, labels)


def fidelity_and_roles(records: list[RoutingRecord], registry: GroupRegistry,
                       seed: int = 0, restarts: int = 20) -> FidelityReport:
    """Source-to-resolver fidelity clustering plus role-prior shape moments."""
    _check_registered(records, registry)
    leaf = _cluster(_source_distributions(records), "leaf", seed, restarts)

    root_records = []
    for rec in records:
        roots = tuple(registry.root_of(g) for g in rec.sequence)
        collapsed = []
        for r in roots:
            if not collapsed or collapsed[-1] != r:
                collapsed.append(r)
        root_records.append(RoutingRecord(rec.ticket_id, tuple(collapsed)))
    root_dists = _source_distributions(root_records)
    root = _cluster(root_dists, "root", seed, restarts) if len(root_dists) >= 3 else None

    priors = compute_priors(records, registry)
    moments: dict[str, tuple[float, float]] = {}
    for role, table in (("initial", priors.initial), ("resolver", priors.resolver),
                        ("participant", priors.participant)):
        logs = np.log([table[g] for g in registry.ids])
        moments[role] = (float(scipy_stats.skew(logs)), float(scipy_stats.kurtosis(logs)))
    return FidelityReport(leaf, root, moments)
