import math
import random
from collections import defaultdict

import numpy as np
import pytest

from ticketrouter.corpus import GroupRegistry, RoutingRecord
from ticketrouter.errors import ValidationError
from ticketrouter.groupnet import (
    DISPATCH,
    RoutingNetwork,
    build_networks,
    compute_centralities,
    compute_priors,
    fidelity_and_roles,
)
from ticketrouter.synthgen import GeneratorConfig, generate_synthetic


def rec(tid, *seq):
    return RoutingRecord(tid, tuple(seq))


REGISTRY = GroupRegistry(["A.X", "A.Y", "B.Z"])


class TestNetworkConstruction:
    def test_resolver_distance_halving(self):
        # A -> B -> C must produce raw links {(A, C): 0.5, (B, C): 1.0}.
        _, resolver, _ = build_networks([rec("t", "A.X", "A.Y", "B.Z")], REGISTRY)
        assert resolver.raw_weight("A.X", "B.Z") == 0.5
        assert resolver.raw_weight("A.Y", "B.Z") == 1.0
        assert resolver.weight("A.X", "B.Z") == 1.0  # normalized per source
        assert resolver.weight("A.Y", "B.Z") == 1.0

    def test_resolver_distance_four_steps(self):
        registry = GroupRegistry(["A.P", "A.Q", "A.R", "A.S"])
        _, resolver, _ = build_networks([rec("t", "A.P", "A.Q", "A.R", "A.S")], registry)
        assert resolver.raw_weight("A.P", "A.S") == 0.25
        assert resolver.raw_weight("A.Q", "A.S") == 0.5
        assert resolver.raw_weight("A.R", "A.S") == 1.0

    def test_transfer_normalization(self):
        transfer, _, _ = build_networks(
            [rec("t1", "A.X", "A.Y"), rec("t2", "A.X", "B.Z")], REGISTRY)
        assert transfer.raw_weight("A.X", "A.Y") == 1.0
        assert transfer.weight("A.X", "A.Y") == 0.5
        assert transfer.weight("A.X", "B.Z") == 0.5

    def test_root_network_drops_same_root(self):
        _, _, root = build_networks([rec("t1", "A.X", "A.Y")], REGISTRY)
        assert root.n_edges == 0
        _, _, root = build_networks(
            [rec("t1", "A.X", "A.Y"), rec("t2", "A.X", "B.Z")], REGISTRY)
        assert root.weight("A", "B") == 1.0
        assert root.nodes == ("A", "B")

    def test_isolated_groups_remain_nodes(self):
        registry = GroupRegistry(["A.X", "A.Y", "B.Z", "C.W"])
        transfer, resolver, _ = build_networks([rec("t", "A.X", "A.Y")], registry)
        assert transfer.nodes == registry.ids
        assert resolver.nodes == registry.ids
        assert transfer.out_edges("C.W") == {}

    def test_one_step_records_add_no_edges(self):
        transfer, resolver, root = build_networks([rec("t", "A.X")], REGISTRY)
        assert transfer.n_edges == resolver.n_edges == root.n_edges == 0

    def test_unregistered_group_rejected(self):
        with pytest.raises(ValidationError, match="unregistered"):
            build_networks([rec("t", "Z.Q")], REGISTRY)

    def test_out_weights_sum_to_one(self):
        corpus = generate_synthetic(GeneratorConfig(tickets=400), seed=1)
        for net in build_networks(corpus.records, corpus.registry):
            for src in net.nodes:
                out = net.out_edges(src)
                if out:
                    assert math.isclose(sum(out.values()), 1.0, abs_tol=1e-12)


class TestPriors:
    def test_smoothing_by_hand(self):
        records = [rec("t1", "NW.NET"), rec("t2", "AC.BE", "AC.FE"),
                   rec("t3", "AC.FE", "NW.NET")]
        registry = GroupRegistry(["AC.BE", "AC.FE", "NW.NET"])
        priors = compute_priors(records, registry)
        assert priors.initial["AC.BE"] == pytest.approx(2 / 6)
        assert priors.resolver["NW.NET"] == pytest.approx(3 / 6)
        assert priors.resolver["AC.BE"] == pytest.approx(1 / 6)
        assert priors.participant["AC.FE"] == pytest.approx(3 / 6)
        assert priors.log_resolver("NW.NET") == pytest.approx(math.log(0.5))

    def test_initial_and_resolver_sum_to_one(self):
        corpus = generate_synthetic(GeneratorConfig(tickets=300), seed=2)
        priors = compute_priors(corpus.records, corpus.registry)
        assert sum(priors.initial.values()) == pytest.approx(1.0)
        assert sum(priors.resolver.values()) == pytest.approx(1.0)
        assert sum(priors.participant.values()) >= 1.0
        for g in corpus.registry.ids:
            assert priors.participant_counts[g] >= priors.resolver_counts[g]


def net_from_edges(nodes, edges):
    raw: dict[str, dict[str, float]] = defaultdict(dict)
    for u, v, w in edges:
        raw[u][v] = w
    return RoutingNetwork.from_raw("test", nodes, dict(raw))


def brute_force_betweenness(nodes, adj):
    """Oracle: enumerate every shortest path explicitly."""
    def all_shortest_paths(s, t):
        best, found, frontier = None, [], [[s]]
        while frontier and best is None or (frontier and len(frontier[0]) <= best):
            nxt = []
            for path in frontier:
                for v in adj.get(path[-1], []):
                    if v in path:
                        continue
                    new = path + [v]
                    if v == t:
                        best = len(new)
                        found.append(new)
                    else:
                        nxt.append(new)
            frontier = [p for p in nxt if best is None or len(p) < best]
        return found

    bc = {n: 0.0 for n in nodes}
    for s in nodes:
        for t in nodes:
            if s == t:
                continue
            paths = all_shortest_paths(s, t)
            if not paths:
                continue
            for v in nodes:
                if v in (s, t):
                    continue
                bc[v] += sum(1 for p in paths if v in p) / len(paths)
    return bc


class TestCentralities:
    def test_path_graph_by_hand(self):
        net = net_from_edges(["a", "b", "c"], [("a", "b", 1.0), ("b", "c", 1.0)])
        table = compute_centralities(net)
        assert table.value("in_degree", "a") == 0
        assert table.value("out_degree", "a") == 1
        assert table.value("degree", "b") == 2
        assert table.value("harmonic", "a") == pytest.approx(1.5)
        assert table.value("closeness", "a") == pytest.approx(2 / 3)
        assert table.value("closeness", "c") == 0.0
        assert table.value("eccentricity", "a") == 2
        assert table.value("eccentricity", "c") == 0
        assert table.value("betweenness", "b") == pytest.approx(1.0)
        assert table.value("hub", "c") == pytest.approx(0.0, abs=1e-9)
        assert table.value("authority", "a") == pytest.approx(0.0, abs=1e-9)

    def test_cycle_eigenvector_uniform(self):
        net = net_from_edges(["a", "b", "c"],
                             [("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)])
        table = compute_centralities(net)
        for n in "abc":
            assert table.value("eigenvector", n) == pytest.approx(1 / math.sqrt(3))
            assert table.value("pagerank", n) == pytest.approx(1 / 3)

    def test_triangle_clustering(self):
        edges = [(u, v, 1.0) for u in "abc" for v in "abc" if u != v]
        table = compute_centralities(net_from_edges(["a", "b", "c"], edges))
        for n in "abc":
            assert table.value("clustering", n) == pytest.approx(1.0)

    def test_pagerank_sums_to_one_with_dangling(self):
        net = net_from_edges(["a", "b", "c", "d"], [("a", "b", 0.7), ("a", "c", 0.3)])
        table = compute_centralities(net)
        total = sum(table.value("pagerank", n) for n in net.nodes)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_betweenness_matches_path_enumeration_oracle(self):
        rng = random.Random(17)
        for trial in range(25):
            n = rng.randint(3, 8)
            nodes = [f"n{i}" for i in range(n)]
            adj = defaultdict(list)
            edges = []
            for u in nodes:
                for v in nodes:
                    if u != v and rng.random() < 0.35:
                        adj[u].append(v)
                        edges.append((u, v, 1.0))
            if not edges:
                continue
            table = compute_centralities(net_from_edges(nodes, edges))
            oracle = brute_force_betweenness(nodes, adj)
            for node in nodes:
                assert table.value("betweenness", node) == pytest.approx(
                    oracle[node], abs=1e-12)

    def test_empty_graph_rejected(self):
        with pytest.raises(ValidationError):
            compute_centralities(RoutingNetwork("test", (), {}, {}))

    def test_benchmark_invariants(self):
        corpus = generate_synthetic(GeneratorConfig(tickets=500), seed=4)
        _, resolver, _ = build_networks(corpus.records, corpus.registry)
        table = compute_centralities(resolver)
        assert sum(table.values["pagerank"].values()) == pytest.approx(1.0, abs=1e-9)
        for g in resolver.nodes:
            assert 0.0 <= table.value("clustering", g) <= 1.0
        row = table.row(resolver.nodes[0])
        assert len(row) == 15


class TestFidelity:
    @staticmethod
    def planted_records():
        records = []
        i = 0

        def add(seq, times):
            nonlocal i
            for _ in range(times):
                records.append(rec(f"t{i}", *seq))
                i += 1

        for r in ("A.R1", "A.R2"):          # high fidelity: mostly dispatch
            add([r], 18), add(["B.S", r], 2)
        for r in ("A.R3", "A.R4"):          # medium
            add([r], 10), add(["B.S", r], 10)
        for r in ("A.R5", "A.R6"):          # low: mostly via one source
            add([r], 2), add(["B.S", r], 18)
        return records

    def test_planted_clusters_recovered(self):
        registry = GroupRegistry(["A.R1", "A.R2", "A.R3", "A.R4", "A.R5", "A.R6", "B.S"])
        report = fidelity_and_roles(self.planted_records(), registry, seed=0)
        labels = report.leaf.labels
        assert labels["A.R1"] == labels["A.R2"] == "high"
        assert labels["A.R3"] == labels["A.R4"] == "medium"
        assert labels["A.R5"] == labels["A.R6"] == "low"
        # Dispatch share sits at slot 0 of every profile.
        assert report.leaf.distributions["A.R1"][0] == pytest.approx(0.9)
        assert report.leaf.distributions["A.R5"][0] == pytest.approx(0.1)
        # Only roots A and B resolve at root level here, so no root clustering.
        assert report.root is None

    def test_root_level_present_on_benchmark(self):
        corpus = generate_synthetic(GeneratorConfig(tickets=1000), seed=6)
        report = fidelity_and_roles(corpus.records, corpus.registry, seed=0)
        assert report.root is not None
        assert set(report.root.labels.values()) <= {"high", "medium", "low"}
        assert set(report.leaf.labels) <= set(corpus.registry.ids)

    def test_too_few_resolvers_rejected(self):
        registry = GroupRegistry(["A.R1", "A.R2"])
        with pytest.raises(ValidationError, match="at least 3"):
            fidelity_and_roles([rec("t0", "A.R1"), rec("t1", "A.R2")], registry)

    def test_role_moments_match_direct_formula(self):
        corpus = generate_synthetic(GeneratorConfig(tickets=400), seed=8)
        report = fidelity_and_roles(corpus.records, corpus.registry, seed=0)
        priors = compute_priors(corpus.records, corpus.registry)
        for role, table in (("initial", priors.initial),
                            ("resolver", priors.resolver),
                            ("participant", priors.participant)):
            x = np.log([table[g] for g in corpus.registry.ids])
            mu = x.mean()
            m2 = ((x - mu) ** 2).mean()
            skew = ((x - mu) ** 3).mean() / m2 ** 1.5
            kurt = ((x - mu) ** 4).mean() / m2 ** 2 - 3.0
            got_skew, got_kurt = report.role_moments[role]
            assert got_skew == pytest.approx(skew, abs=1e-9)
            assert got_kurt == pytest.approx(kurt, abs=1e-9)

    def test_dispatch_sentinel_distinct_from_groups(self):
        assert DISPATCH not in GroupRegistry(["A.X"]).ids
