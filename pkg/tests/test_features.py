import csv
import hashlib
import math

import numpy as np
import pytest

from ticketrouter.corpus import GroupRegistry, RoutingRecord, Ticket
from ticketrouter.errors import ValidationError
from ticketrouter.features import (
    BLOCKS,
    FEATURE_NAMES,
    G_FEATURES,
    GG_FEATURES,
    N_FEATURES,
    SCHEMA_VERSION,
    T_FEATURES,
    TG_FEATURES,
    FeaturePipeline,
    NormalizationTable,
    TransitionStats,
    block_slots,
    mask_blocks,
    schema_hash,
    transition_features,
    write_feature_csv,
)
from ticketrouter.groupnet import build_networks, compute_priors
from ticketrouter.textmodels import relevance_scores, similarity_scores, ticket_block

GROUPS = ["A.X", "A.Y", "A.Z", "B.P", "B.Q"]

TOY_SEQUENCES = [
    ("t01", ("A.X",)),
    ("t02", ("A.X", "A.Y")),
    ("t03", ("A.X", "A.Y")),
    ("t04", ("A.Y", "A.Z")),
    ("t05", ("A.X", "A.Z", "A.Y")),
    ("t06", ("B.P",)),
    ("t07", ("B.P", "B.Q")),
    ("t08", ("A.Y",)),
    ("t09", ("B.Q", "A.X", "A.Y")),
    ("t10", ("A.Z", "A.Y", "A.X", "B.P")),
]


def mk_ticket(tid, counts, padding=0):
    tokens = []
    for e, c in counts.items():
        tokens.extend([e] * c)
    tokens.extend(["pad"] * padding)
    return Ticket(tid, " ".join(tokens), tuple(counts.items()))


@pytest.fixture(scope="module")
def toy():
    registry = GroupRegistry(GROUPS)
    records = [RoutingRecord(tid, seq) for tid, seq in TOY_SEQUENCES]
    tickets = [
        mk_ticket(tid, {f"{seq[-1].lower().replace('.', '_')}_e{k}": 1 + (i + k) % 2
                        for k in range(3)})
        for i, (tid, seq) in enumerate(TOY_SEQUENCES)
    ]
    priors = compute_priors(records, registry)
    transfer, _, _ = build_networks(records, registry)
    stats = TransitionStats(records, registry, priors, transfer)
    return registry, records, tickets, priors, transfer, stats


class BruteForce:
    """Independent recount of every GG statistic straight from the log."""

    def __init__(self, records, registry):
        self.seqs = [r.sequence for r in records]
        self.n_groups = len(registry)

    def fms(self, s, g):
        best = 0.0
        for g_r in set(s):
            num = den = 0
            for seq in self.seqs:
                for a, b in zip(seq, seq[1:]):
                    if a == g_r:
                        den += 1
                        if b == g:
                            num += 1
            if den:
                best = max(best, num / den)
        return best

    def vms(self, s, g):
        best = 0.0
        for k in (1, 2):
            if len(s) < k:
                continue
            ctx = tuple(s[-k:])
            num = den = 0
            for seq in self.seqs:
                for i in range(len(seq) - k):
                    if tuple(seq[i:i + k]) == ctx:
                        den += 1
                        if seq[i + k] == g:
                            num += 1
            best = max(best, (num + 1) / (den + self.n_groups))
        return best

    def coll(self, s, g):
        members = [seq for seq in self.seqs if set(seq) & set(s)]
        if not members:
            return 0.0
        return sum(1 for seq in members if seq[-1] == g) / len(members)


PROBES = [
    ((), "A.X"),
    (("A.X",), "A.Y"),
    (("A.X",), "B.P"),
    (("A.Y",), "A.Z"),
    (("B.P",), "B.Q"),
    (("A.X", "A.Y"), "A.Z"),
    (("A.Z", "A.Y"), "A.X"),
    (("A.X", "A.Z"), "A.Y"),
    (("B.Q", "A.X"), "A.Y"),
    (("A.Y", "A.X"), "B.P"),
    (("B.P", "B.Q"), "A.X"),
]


class TestTransitionFeatures:
    def test_matches_brute_force_on_toy_log(self, toy):
        registry, records, _, priors, _, stats = toy
        oracle = BruteForce(records, registry)
        for s, g in PROBES:
            length, fms, vms, coll = stats.features(s, g)
            assert length == len(s)
            if s:
                assert fms == pytest.approx(oracle.fms(s, g), abs=1e-12)
                assert vms == pytest.approx(oracle.vms(s, g), abs=1e-12)
                assert coll == pytest.approx(oracle.coll(s, g), abs=1e-12)
            else:
                expect = priors.resolver[g]
                assert (fms, vms, coll) == (expect, expect, expect)

    def test_priors_match_brute_force_on_toy_log(self, toy):
        registry, records, _, priors, _, _ = toy
        n_t, n_g = len(records), len(registry)
        for g in registry.ids:
            init = sum(1 for r in records if r.sequence[0] == g)
            reso = sum(1 for r in records if r.sequence[-1] == g)
            part = sum(1 for r in records if g in r.sequence)
            assert priors.initial[g] == pytest.approx((init + 1) / (n_t + n_g), abs=1e-12)
            assert priors.resolver[g] == pytest.approx((reso + 1) / (n_t + n_g), abs=1e-12)
            assert priors.participant[g] == pytest.approx((part + 1) / (n_t + n_g), abs=1e-12)

    def test_deterministic_transition_is_near_one(self):
        registry = GroupRegistry(["R.B", "R.C", "R.D"])
        records = [RoutingRecord(f"t{i}", ("R.B", "R.C")) for i in range(5)]
        priors = compute_priors(records, registry)
        transfer, _, _ = build_networks(records, registry)
        stats = TransitionStats(records, registry, priors, transfer)
        _, fms, vms, _ = stats.features(("R.B",), "R.C")
        assert fms == 1.0                      # every B went to C
        assert vms == pytest.approx(6 / 8)     # (5+1)/(5+3) with add-one smoothing

    def test_candidate_in_sequence_rejected(self, toy):
        _, _, _, _, _, stats = toy
        with pytest.raises(ValidationError, match="already appears"):
            stats.features(("A.X", "A.Y"), "A.X")
        with pytest.raises(ValidationError, match="unknown candidate"):
            stats.features(("A.X",), "Z.Z")

    def test_module_level_wrapper(self, toy):
        _, _, _, _, _, stats = toy
        assert transition_features(["A.X"], "A.Y", stats) == stats.features(("A.X",), "A.Y")


class TestSchema:
    def test_layout(self):
        assert len(T_FEATURES) == 5
        assert len(G_FEATURES) == 19
        assert len(TG_FEATURES) == 7
        assert len(GG_FEATURES) == 4
        assert N_FEATURES == 35
        assert FEATURE_NAMES == T_FEATURES + G_FEATURES + TG_FEATURES + GG_FEATURES
        assert len(set(FEATURE_NAMES)) == 35

    def test_hash_is_stable_digest_of_names(self):
        text = f"v{SCHEMA_VERSION}:" + ",".join(FEATURE_NAMES)
        expect = hashlib.sha256(text.encode()).hexdigest()[:16]
        assert schema_hash() == expect
        assert len(schema_hash()) == 16

    def test_block_slots(self):
        assert block_slots("T") == [0, 1, 2, 3, 4]
        assert block_slots("GG") == [31, 32, 33, 34]
        with pytest.raises(ValidationError, match="unknown feature block"):
            block_slots("XX")
        covered = sorted(i for b in BLOCKS for i in block_slots(b))
        assert covered == list(range(35))


class TestNormalization:
    def test_fit_transform_and_clamp(self):
        rng = np.random.default_rng(0)
        matrix = rng.uniform(-5, 5, size=(40, N_FEATURES))
        matrix[:, 3] = 7.0  # degenerate slot
        table = NormalizationTable.fit(matrix)
        out = table.transform(matrix)
        assert out.shape == matrix.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.all(out[:, 3] == 0.0)
        probe = np.full(N_FEATURES, 100.0)
        assert np.all(table.transform(probe) == 1.0) or table.transform(probe)[3] == 0.0
        low = table.transform(np.full(N_FEATURES, -100.0))
        assert np.all(low == 0.0)

    def test_endpoints_map_to_zero_and_one(self):
        matrix = np.zeros((3, N_FEATURES))
        matrix[0] = 1.0
        matrix[2] = 3.0
        table = NormalizationTable.fit(matrix)
        assert table.transform(matrix[2]).max() == 1.0
        assert table.transform(matrix[1]).min() == 0.0

    def test_bad_shapes_rejected(self):
        with pytest.raises(ValidationError):
            NormalizationTable.fit(np.zeros((0, N_FEATURES)))
        with pytest.raises(ValidationError):
            NormalizationTable.fit(np.zeros((4, 7)))

    def test_json_round_trip(self, tmp_path):
        matrix = np.random.default_rng(1).normal(size=(10, N_FEATURES))
        table = NormalizationTable.fit(matrix)
        path = tmp_path / "norm.json"
        table.to_json(path)
        loaded = NormalizationTable.from_json(path)
        assert np.array_equal(loaded.lo, table.lo)
        assert np.array_equal(loaded.hi, table.hi)
        tampered = path.read_text().replace(schema_hash(), "0" * 16)
        path.write_text(tampered)
        with pytest.raises(ValidationError, match="different schema"):
            NormalizationTable.from_json(path)


@pytest.fixture(scope="module")
def pipeline():
    registry = GroupRegistry(GROUPS)
    records = [RoutingRecord(tid, seq) for tid, seq in TOY_SEQUENCES]
    tickets = [
        mk_ticket(tid, {f"{seq[-1].lower().replace('.', '_')}_e{k}": 1 + (i + k) % 2
                        for k in range(3)})
        for i, (tid, seq) in enumerate(TOY_SEQUENCES)
    ]
    pipe = FeaturePipeline.build(tickets, records, registry, seed=0)
    triplets = [(t, (), g) for t in tickets for g in registry.ids]
    pipe.normalization = NormalizationTable.fit(pipe.matrix(triplets, normalized=False))
    return pipe, tickets, registry


class TestFeaturePipeline:
    def test_vector_contract(self, pipeline):
        pipe, tickets, registry = pipeline
        vec = pipe.vector(tickets[0], (), "A.Y")
        assert vec.shape == (N_FEATURES,)
        assert vec.min() >= 0.0 and vec.max() <= 1.0
        again = pipe.vector(tickets[0], (), "A.Y")
        assert np.array_equal(vec, again)

    def test_t_block_shared_across_candidates(self, pipeline):
        pipe, tickets, registry = pipeline
        a = pipe.raw_vector(tickets[2], ("A.X",), "A.Y")
        b = pipe.raw_vector(tickets[2], ("A.X",), "B.Q")
        assert np.array_equal(a[:5], b[:5])
        assert not np.array_equal(a[5:], b[5:])

    def test_raw_slots_match_component_functions(self, pipeline):
        pipe, tickets, _ = pipeline
        t, g, seq = tickets[4], "A.Y", ("A.X",)
        raw = pipe.raw_vector(t, seq, g)
        assert raw[:5] == pytest.approx(ticket_block(t, pipe.models.collection))
        assert raw[5] == pytest.approx(math.log(pipe.priors.participant[g]))
        assert raw[6] == pytest.approx(math.log(pipe.priors.initial[g]))
        assert raw[7] == pytest.approx(math.log(pipe.priors.resolver[g]))
        assert raw[8] == pipe.priors.resolver_counts[g]
        assert tuple(raw[9:24]) == pytest.approx(pipe.centralities.row(g))
        qlm, bm25, sdm, log_p = relevance_scores(t, g, pipe.models)
        cos_ent, cos_emb, dist = similarity_scores(t, g, pipe.models)
        assert tuple(raw[24:31]) == pytest.approx((log_p, cos_ent, cos_emb, dist,
                                                   qlm, bm25, sdm))
        assert tuple(raw[31:]) == pytest.approx(pipe.transitions.features(seq, g))

    def test_unfitted_normalization_rejected(self, pipeline):
        pipe, tickets, registry = pipeline
        bare = FeaturePipeline(pipe.models, pipe.priors, pipe.transfer,
                               pipe.resolver_net, pipe.root_net,
                               pipe.centralities, pipe.transitions)
        with pytest.raises(ValidationError, match="normalization"):
            bare.vector(tickets[0], (), "A.X")

    def test_unknown_group_rejected(self, pipeline):
        pipe, tickets, _ = pipeline
        with pytest.raises(ValidationError, match="unknown candidate"):
            pipe.raw_vector(tickets[0], (), "Z.Z")


class TestMaskAndExport:
    def test_mask_blocks(self):
        matrix = np.ones((4, N_FEATURES))
        out = mask_blocks(matrix, ["TG"])
        assert np.all(out[:, block_slots("TG")] == 0.0)
        untouched = [i for i in range(N_FEATURES) if i not in block_slots("TG")]
        assert np.all(out[:, untouched] == 1.0)
        assert np.all(matrix == 1.0)  # input untouched
        both = mask_blocks(matrix, ["T", "GG"])
        assert np.all(both[:, block_slots("T") + block_slots("GG")] == 0.0)

    def test_feature_csv(self, tmp_path):
        rows = [("t1", 0, "A.X", 1.0), ("t1", 1, "A.Y", 0.5)]
        matrix = np.arange(2 * N_FEATURES, dtype=float).reshape(2, N_FEATURES)
        path = tmp_path / "features.csv"
        write_feature_csv(path, rows, matrix)
        with open(path) as fh:
            got = list(csv.reader(fh))
        assert got[0] == ["ticket_id", "step", "group_id", "label", *FEATURE_NAMES]
        assert len(got) == 3
        assert float(got[1][4]) == 0.0 and float(got[2][-1]) == 69.0
        with pytest.raises(ValidationError):
            write_feature_csv(path, rows[:1], matrix)
