import pytest

from ticketrouter.corpus import GroupRegistry, RoutingRecord, Ticket
from ticketrouter.errors import ValidationError
from ticketrouter.groupnet import RoutingNetwork, build_networks
from ticketrouter.rootrank import (
    CandidateSet,
    build_index,
    generate_candidates,
    predict_root,
)
from ticketrouter.synthgen import GeneratorConfig, generate_synthetic


def mk_ticket(tid, counts):
    tokens = []
    for e, c in counts.items():
        tokens.extend([e] * c)
    return Ticket(tid, " ".join(tokens), tuple(counts.items()))


REGISTRY = GroupRegistry(["AC.X", "AC.Y", "PM.Z", "NW.Q"])


def small_index():
    tickets = [
        mk_ticket("t1", {"db": 2, "disk": 1}),
        mk_ticket("t2", {"db": 1, "query": 1}),
        mk_ticket("t3", {"paper": 1, "jam": 2}),
        mk_ticket("t4", {"paper": 2}),
        mk_ticket("t5", {"vpn": 1, "tunnel": 1}),
    ]
    records = [
        RoutingRecord("t1", ("AC.X",)),
        RoutingRecord("t2", ("AC.Y",)),
        RoutingRecord("t3", ("PM.Z",)),
        RoutingRecord("t4", ("PM.Z",)),
        RoutingRecord("t5", ("NW.Q",)),
    ]
    return tickets, records, build_index(tickets, records, REGISTRY)


class TestIndex:
    def test_postings_match_hand_built_lists(self):
        _, _, index = small_index()
        assert index.postings["db"] == (("t1", 2), ("t2", 1))
        assert index.postings["paper"] == (("t3", 1), ("t4", 2))
        assert index.n_tickets == 5
        assert index.resolver_root == {"t1": "AC", "t2": "AC", "t3": "PM",
                                       "t4": "PM", "t5": "NW"}

    def test_self_query_is_rank_one(self):
        tickets, _, index = small_index()
        for t in tickets:
            root = predict_root(t, index)
            assert root == index.resolver_root[t.id]

    def test_majority_vote(self):
        _, _, index = small_index()
        # "paper" hits t3, t4 (PM) only.
        assert predict_root(mk_ticket("q", {"paper": 1}), index) == "PM"
        # "db" hits t1, t2, both AC.
        assert predict_root(mk_ticket("q", {"db": 3}), index) == "AC"

    def test_vote_tie_breaks_lexicographically(self):
        # One NW ticket and one PM ticket match equally: NW < PM wins.
        tickets = [mk_ticket("t1", {"shared": 1}), mk_ticket("t2", {"shared": 1})]
        records = [RoutingRecord("t1", ("PM.Z",)), RoutingRecord("t2", ("NW.Q",))]
        index = build_index(tickets, records, REGISTRY)
        assert predict_root(mk_ticket("q", {"shared": 1}), index) == "NW"

    def test_fallback_when_no_overlap(self):
        _, _, index = small_index()
        assert index.fallback_root == "AC"  # AC and PM tie at 2; AC < PM
        assert predict_root(mk_ticket("q", {"zzz": 1}), index) == "AC"

    def test_tickets_without_records_are_not_indexed(self):
        tickets = [mk_ticket("t1", {"a": 1}), mk_ticket("t2", {"b": 1})]
        records = [RoutingRecord("t1", ("AC.X",))]
        index = build_index(tickets, records, REGISTRY)
        assert index.n_tickets == 1
        with pytest.raises(ValidationError, match="no training tickets"):
            build_index(tickets, [], REGISTRY)


class TestCandidates:
    @staticmethod
    def root_net():
        raw = {"AC": {"PM": 3.0, "NW": 1.0}, "PM": {"AC": 2.0}}
        return RoutingNetwork.from_raw("root-level", ["AC", "PM", "NW"], raw)

    def test_no_expansion_at_zero(self):
        _, _, index = small_index()
        cs = generate_candidates(mk_ticket("q", {"db": 1}), 0, self.root_net(),
                                 index, REGISTRY)
        assert cs.predicted_root == "AC"
        assert cs.roots == ("AC",)
        assert cs.groups == ("AC.X", "AC.Y")
        assert "AC.X" in cs and "PM.Z" not in cs

    def test_expansion_orders_neighbors_by_weight(self):
        _, _, index = small_index()
        cs = generate_candidates(mk_ticket("q", {"db": 1}), 1, self.root_net(),
                                 index, REGISTRY)
        assert cs.roots == ("AC", "PM")  # PM edge 0.75 beats NW 0.25
        cs = generate_candidates(mk_ticket("q", {"db": 1}), 5, self.root_net(),
                                 index, REGISTRY)
        assert cs.roots == ("AC", "PM", "NW")  # saturation at out-degree
        assert cs.groups == ("AC.X", "AC.Y", "NW.Q", "PM.Z")

    def test_root_absent_from_network(self):
        _, _, index = small_index()
        net = RoutingNetwork.from_raw("root-level", ["AC", "PM"], {"AC": {"PM": 1.0}})
        cs = generate_candidates(mk_ticket("q", {"vpn": 1}), 10, net, index, REGISTRY)
        assert cs.predicted_root == "NW"
        assert cs.roots == ("NW",)
        assert cs.groups == ("NW.Q",)

    def test_negative_n_rejected(self):
        _, _, index = small_index()
        with pytest.raises(ValidationError, match=">= 0"):
            generate_candidates(mk_ticket("q", {"db": 1}), -1, self.root_net(),
                                index, REGISTRY)

    def test_candidate_set_invariants(self):
        cs = CandidateSet("AC", ("AC", "PM"), ("AC.X", "PM.Z"))
        assert cs.predicted_root in cs.roots


@pytest.fixture(scope="module")
def setup():
    corpus = generate_synthetic(GeneratorConfig(tickets=1200), seed=42)
    half = len(corpus.tickets) // 2
    train_t = corpus.tickets[:half]
    test_t = corpus.tickets[half:]
    train_ids = {t.id for t in train_t}
    train_r = [r for r in corpus.records if r.ticket_id in train_ids]
    test_r = {r.ticket_id: r for r in corpus.records if r.ticket_id not in train_ids}
    index = build_index(train_t, train_r, corpus.registry)
    _, _, root_net = build_networks(train_r, corpus.registry)
    return corpus, test_t, test_r, index, root_net


class TestOnSynthetic:
    def test_root_accuracy_on_held_out(self, setup):
        corpus, test_t, test_r, index, _ = setup
        hits = sum(
            1 for t in test_t
            if predict_root(t, index) == corpus.registry.root_of(test_r[t.id].resolver)
        )
        assert hits / len(test_t) >= 0.8

    def test_hit_rate_and_size_monotone_in_n(self, setup):
        corpus, test_t, test_r, index, root_net = setup
        prev_hit, prev_size = -1.0, -1
        for n in range(4):
            hits, sizes = 0, 0
            for t in test_t[:200]:
                cs = generate_candidates(t, n, root_net, index, corpus.registry)
                sizes += len(cs.groups)
                if test_r[t.id].resolver in cs:
                    hits += 1
            hit = hits / 200
            size = sizes / 200
            assert hit >= prev_hit and size >= prev_size
            prev_hit, prev_size = hit, size

    def test_deterministic(self, setup):
        corpus, test_t, _, index, root_net = setup
        a = generate_candidates(test_t[0], 10, root_net, index, corpus.registry)
        b = generate_candidates(test_t[0], 10, root_net, index, corpus.registry)
        assert a == b
