"""Offline pipeline: generate, build, train, evaluate, ablate, report.

Each command reads the artifacts of its predecessors from a shared work
directory and writes its own:

    workdir/corpus/   tickets.jsonl, routing.jsonl, groups.txt, generator.json
    workdir/build/    networks, priors, centralities, fidelity, split,
                      candidates, features, normalization, artifacts.pkl
    workdir/models/   ranker artifacts plus feature-importance tables
    workdir/reports/  per-system metrics, ablation table, consolidated report

Every random choice draws from a seed derived per purpose, so reruns with
the same config and seed reproduce every report byte for byte.
"""

from __future__ import annotations

import csv
import json
import pickle
from dataclasses import dataclass, field, fields
from pathlib import Path
import random

from .corpus import Corpus, corpus_stats, parse_corpus, save_corpus
from .errors import ConfigError, PipelineError, ValidationError
from .features import BLOCKS, FeaturePipeline, schema_hash, write_feature_csv
from .groupnet import fidelity_and_roles
from .ranking import (
    TrainingSet,
    build_training_set,
    feature_importance,
    load_model,
    save_model,
    train_pairwise,
    train_pointwise,
)
from .rootrank import build_index, generate_candidates, write_candidates_jsonl
from .simulate import (
    SYSTEM_FM,
    SYSTEM_FMS,
    SYSTEM_HUMAN,
    SYSTEM_PAIRWISE,
    SYSTEM_POINTWISE,
    SYSTEM_VMS,
    ModelScorer,
    TransitionScorer,
    build_loo_pools,
    derive_seed,
    evaluate_system,
    human_reference,
    leave_one_out_hit_rate,
)
from .synthgen import GeneratorConfig

COMMANDS = ("gen-data", "build", "train", "evaluate", "ablate", "report")
BLOCK_NAMES = tuple(BLOCKS)


@dataclass
class PipelineConfig:
    """Everything a pipeline run needs, loadable from one JSON file."""

    workdir: str = "work"
    seed: int = 42
    neighbors: int = 10
    negative_ratio: int = 1
    forest_trees: int = 200
    boosting_rounds: int = 300
    learning_rate: float = 0.1
    blocks: tuple[str, ...] = BLOCK_NAMES
    test_per_length: int = 100
    max_test_length: int = 4
    pool_size: int = 50
    step_cap: int = 10
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        self.blocks = tuple(self.blocks)

    def validate(self) -> None:
        if self.neighbors < 0:
            raise ConfigError(f"neighbors must be >= 0, got {self.neighbors}")
        if self.negative_ratio < 1:
            raise ConfigError(f"negative_ratio must be >= 1, got {self.negative_ratio}")
        for name in ("forest_trees", "boosting_rounds", "test_per_length",
                     "max_test_length", "pool_size", "step_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        unknown = set(self.blocks) - set(BLOCK_NAMES)
        if unknown or not self.blocks:
            raise ConfigError(f"blocks must be a non-empty subset of {BLOCK_NAMES}")
        if len(set(self.blocks)) != len(self.blocks):
            raise ConfigError("blocks must not repeat")
        self.generator.validate()

    # Directory layout under the work directory.
    @property
    def corpus_dir(self) -> Path:
        return Path(self.workdir) / "corpus"

    @property
    def build_dir(self) -> Path:
        return Path(self.workdir) / "build"

    @property
    def models_dir(self) -> Path:
        return Path(self.workdir) / "models"

    @property
    def reports_dir(self) -> Path:
        return Path(self.workdir) / "reports"

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "generator"}
        out["blocks"] = list(self.blocks)
        out["generator"] = {f.name: getattr(self.generator, f.name)
                            for f in fields(self.generator)}
        for key, val in out["generator"].items():
            if isinstance(val, tuple):
                out["generator"][key] = list(val)
        return out

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "generator" in data:
            gen = data["generator"]
            gen_known = {f.name for f in fields(GeneratorConfig)}
            gen_unknown = set(gen) - gen_known
            if gen_unknown:
                raise ConfigError(f"unknown generator keys: {sorted(gen_unknown)}")
            gen = {k: tuple(v) if isinstance(v, list) else v for k, v in gen.items()}
            data["generator"] = GeneratorConfig(**gen)
        if "blocks" in data:
            data["blocks"] = tuple(data["blocks"])
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)


@dataclass
class BuildArtifacts:
    """Everything the downstream commands need, pickled as one bundle."""

    pipeline: FeaturePipeline
    index: object
    candidates: dict[str, object]           # ticket id -> CandidateSet
    training: TrainingSet
    split: dict                             # {"train": [...], "test": {"S1": [...]}}
    schema: str


def _require(path: Path, producer: str):
    if not path.exists():
        raise PipelineError(f"missing artifact {path}; run `{producer}` first")


def _load_corpus(cfg: PipelineConfig) -> Corpus:
    _require(cfg.corpus_dir / "tickets.jsonl", "gen-data")
    return parse_corpus(cfg.corpus_dir)


def _load_artifacts(cfg: PipelineConfig) -> BuildArtifacts:
    path = cfg.build_dir / "artifacts.pkl"
    _require(path, "build")
    with open(path, "rb") as fh:
        art = pickle.load(fh)
    if art.schema != schema_hash():
        raise PipelineError("build artifacts use a different feature schema; "
                            "run `build` again")
    return art


def _dump_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(cfg: PipelineConfig) -> None:
    from .synthgen import generate_synthetic

    corpus = generate_synthetic(cfg.generator, cfg.seed)
    cfg.corpus_dir.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, cfg.corpus_dir)
    cfg.generator.to_json(cfg.corpus_dir / "generator.json")
    stats = corpus_stats(corpus)
    _dump_json(cfg.corpus_dir / "stats.json", {
        "tickets": len(corpus.tickets),
        "records": len(corpus.records),
        "groups": len(corpus.registry),
        "roots": len(corpus.registry.roots),
        "ticket_length_hist": {str(k): v for k, v in stats.ticket_length_hist.items()},
        "routing_length_hist": {str(k): v for k, v in stats.routing_length_hist.items()},
        "resolved_counts": stats.resolved_counts,
    })


def _split_records(cfg: PipelineConfig, corpus: Corpus):
    """Stratified held-out split: test_per_length records per sequence length."""
    by_length: dict[int, list] = {}
    for rec in corpus.records:
        by_length.setdefault(len(rec.sequence), []).append(rec)
    test_by_set: dict[str, list] = {}
    test_ids: set[str] = set()
    for length in range(1, cfg.max_test_length + 1):
        available = sorted(by_length.get(length, []), key=lambda r: r.ticket_id)
        if not available:
            continue
        rng = random.Random(derive_seed(cfg.seed, f"split:{length}"))
        take = min(cfg.test_per_length, len(available))
        chosen = sorted(rng.sample(available, take), key=lambda r: r.ticket_id)
        test_by_set[f"S{length}"] = chosen
        test_ids.update(r.ticket_id for r in chosen)
    train_records = [r for r in corpus.records if r.ticket_id not in test_ids]
    if not train_records:
        raise ValidationError("split left no training records")
    return train_records, test_by_set, test_ids


def cmd_build(cfg: PipelineConfig) -> None:
    corpus = _load_corpus(cfg)
    train_records, test_by_set, test_ids = _split_records(cfg, corpus)
    train_tickets = [t for t in corpus.tickets if t.id not in test_ids]

    pipeline = FeaturePipeline.build(train_tickets, train_records, corpus.registry,
                                     seed=derive_seed(cfg.seed, "build"))
    index = build_index(train_tickets, train_records, corpus.registry)
    candidates = {
        t.id: generate_candidates(t, cfg.neighbors, pipeline.root_net, index,
                                  corpus.registry)
        for t in corpus.tickets
    }
    cand_groups = {tid: cs.groups for tid, cs in candidates.items()}
    training = build_training_set(train_tickets, train_records, pipeline,
                                  cand_groups, seed=derive_seed(cfg.seed, "negatives"),
                                  ratio=cfg.negative_ratio)

    out = cfg.build_dir
    out.mkdir(parents=True, exist_ok=True)
    pipeline.transfer.write_edge_list(out / "transfer.edges")
    pipeline.resolver_net.write_edge_list(out / "resolver.edges")
    pipeline.root_net.write_edge_list(out / "root.edges")
    pipeline.priors.to_csv(out / "priors.csv")
    pipeline.centralities.to_csv(out / "centralities.csv")
    pipeline.normalization.to_json(out / "normalization.json")

    fidelity = fidelity_and_roles(train_records, corpus.registry,
                                  seed=derive_seed(cfg.seed, "fidelity") % (2 ** 31))
    def clusters_payload(clusters):
        if clusters is None:
            return None
        return {"labels": clusters.labels,
                "centers": [[float(x) for x in c] for c in clusters.centers]}

    _dump_json(out / "fidelity.json", {
        "leaf": clusters_payload(fidelity.leaf),
        "root": clusters_payload(fidelity.root),
        "role_moments": {role: list(m) for role, m in fidelity.role_moments.items()},
    })

    split = {"train": sorted(r.ticket_id for r in train_records),
             "test": {name: [r.ticket_id for r in recs]
                      for name, recs in test_by_set.items()}}
    _dump_json(out / "split.json", split)
    write_candidates_jsonl(out / "candidates.jsonl",
                           sorted(candidates.items()))
    rows = [(i.ticket_id, i.step, i.group_id, i.label) for i in training.instances]
    write_feature_csv(out / "features.csv", rows, training.X)

    art = BuildArtifacts(pipeline, index, candidates, training, split, schema_hash())
    with open(out / "artifacts.pkl", "wb") as fh:
        pickle.dump(art, fh)


def _removed_blocks(cfg: PipelineConfig) -> tuple[str, ...]:
    return tuple(b for b in BLOCK_NAMES if b not in cfg.blocks)


def _write_importance(path: Path, model) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "weight", "block"])
        for name, weight, block in feature_importance(model):
            writer.writerow([name, f"{weight:.12g}", block])


def cmd_train(cfg: PipelineConfig) -> None:
    art = _load_artifacts(cfg)
    ts = art.training
    removed = _removed_blocks(cfg)
    if removed:
        ts = ts.mask(removed)

    pointwise = train_pointwise(ts, trees=cfg.forest_trees,
                                seed=derive_seed(cfg.seed, "pointwise") % (2 ** 31))
    pairwise = train_pairwise(ts, rounds=cfg.boosting_rounds,
                              learning_rate=cfg.learning_rate,
                              seed=derive_seed(cfg.seed, "pairwise") % (2 ** 31))

    cfg.models_dir.mkdir(parents=True, exist_ok=True)
    save_model(pointwise, cfg.models_dir / "pointwise.pkl")
    save_model(pairwise, cfg.models_dir / "pairwise.pkl")
    _write_importance(cfg.models_dir / "importance-pointwise.csv", pointwise)
    _write_importance(cfg.models_dir / "importance-pairwise.csv", pairwise)
    _dump_json(cfg.models_dir / "train-info.json", {
        "instances": len(ts),
        "queries": len(ts.query_rows),
        "masked_blocks": list(ts.masked),
        "pairwise_rounds_used": pairwise.rounds_used,
        "pairwise_train_ndcg": pairwise.train_ndcg,
    })


def _test_sets(art: BuildArtifacts, corpus: Corpus):
    by_id = {r.ticket_id: r for r in corpus.records}
    return {name: [by_id[tid] for tid in tids]
            for name, tids in sorted(art.split["test"].items())}


def _metrics_payload(report) -> dict:
    payload = {"system": report.system, "test_set": report.test_set,
               "mstr": report.mstr, "rr": list(report.rr),
               "madr": list(report.madr)}
    if report.hr is not None:
        payload["hr"] = {str(k): v for k, v in sorted(report.hr.items())}
    return payload


def _scorer_table(cfg: PipelineConfig, art: BuildArtifacts, registry):
    """(system -> scorer, system -> per-ticket candidate pool map)."""
    pipeline = art.pipeline
    pointwise = load_model(cfg.models_dir / "pointwise.pkl")
    pairwise = load_model(cfg.models_dir / "pairwise.pkl")
    model_pools = {tid: cs.groups for tid, cs in art.candidates.items()}
    registry_pools = {tid: registry.ids for tid in art.candidates}
    scorers = {
        SYSTEM_POINTWISE: ModelScorer(pipeline, pointwise),
        SYSTEM_PAIRWISE: ModelScorer(pipeline, pairwise),
        SYSTEM_FM: TransitionScorer("fm", pipeline),
        SYSTEM_FMS: TransitionScorer("fms", pipeline),
        SYSTEM_VMS: TransitionScorer("vms", pipeline),
    }
    pools = {
        SYSTEM_POINTWISE: model_pools,
        SYSTEM_PAIRWISE: model_pools,
        SYSTEM_FM: registry_pools,
        SYSTEM_FMS: registry_pools,
        SYSTEM_VMS: registry_pools,
    }
    return scorers, pools


METRIC_COLUMNS = (["system", "test_set", "mstr"]
                  + [f"rr@{n}" for n in range(1, 11)]
                  + [f"madr@{k}" for k in range(1, 11)]
                  + ["hr@1", "hr@3", "hr@5"])


def _metrics_row(report) -> list[str]:
    row = [report.system, report.test_set, f"{report.mstr:.12g}"]
    row += [f"{v:.12g}" for v in report.rr]
    row += [f"{v:.12g}" for v in report.madr]
    if report.hr is None:
        row += ["", "", ""]
    else:
        row += [f"{report.hr[k]:.12g}" for k in (1, 3, 5)]
    return row


def cmd_evaluate(cfg: PipelineConfig) -> None:
    art = _load_artifacts(cfg)
    _require(cfg.models_dir / "pointwise.pkl", "train")
    _require(cfg.models_dir / "pairwise.pkl", "train")
    corpus = _load_corpus(cfg)
    by_id = {t.id: t for t in corpus.tickets}
    test_sets = _test_sets(art, corpus)
    if not test_sets:
        raise PipelineError("build produced no test sets; run `build` on a "
                            "corpus with held-out data")

    cand_groups = {tid: cs.groups for tid, cs in art.candidates.items()}
    all_test = [rec for recs in test_sets.values() for rec in recs]
    loo_pools = build_loo_pools(all_test, cand_groups, corpus.registry,
                                pool_size=cfg.pool_size,
                                seed=derive_seed(cfg.seed, "loo"))
    scorers, pools = _scorer_table(cfg, art, corpus.registry)

    reports = []
    for system in sorted(scorers):
        for name, recs in test_sets.items():
            reports.append(evaluate_system(
                system, recs, by_id, pools[system], scorers[system], name,
                loo_pools=loo_pools, cap=cfg.step_cap))
    for name, recs in test_sets.items():
        reports.append(human_reference(recs, name, cap=cfg.step_cap))

    cfg.reports_dir.mkdir(parents=True, exist_ok=True)
    by_system: dict[str, dict] = {}
    for rep in reports:
        by_system.setdefault(rep.system, {})[rep.test_set] = _metrics_payload(rep)
    for system, sets in by_system.items():
        _dump_json(cfg.reports_dir / f"metrics-{system}.json",
                   {"system": system, "sets": sets})
    with open(cfg.reports_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for rep in sorted(reports, key=lambda r: (r.system, r.test_set)):
            writer.writerow(_metrics_row(rep))


def cmd_ablate(cfg: PipelineConfig) -> None:
    art = _load_artifacts(cfg)
    _require(cfg.models_dir / "pairwise.pkl", "train")
    corpus = _load_corpus(cfg)
    by_id = {t.id: t for t in corpus.tickets}
    test_sets = _test_sets(art, corpus)
    cand_groups = {tid: cs.groups for tid, cs in art.candidates.items()}
    all_test = [rec for recs in test_sets.values() for rec in recs]
    loo_pools = build_loo_pools(all_test, cand_groups, corpus.registry,
                                pool_size=cfg.pool_size,
                                seed=derive_seed(cfg.seed, "loo"))

    variants = {"full": load_model(cfg.models_dir / "pairwise.pkl")}
    seed = derive_seed(cfg.seed, "pairwise") % (2 ** 31)
    for block in BLOCK_NAMES:
        model = train_pairwise(art.training.mask([block]),
                               rounds=cfg.boosting_rounds,
                               learning_rate=cfg.learning_rate, seed=seed)
        save_model(model, cfg.models_dir / f"pairwise-no-{block}.pkl")
        variants[f"no-{block}"] = model

    table: dict[str, dict[str, dict[int, float]]] = {}
    for variant, model in variants.items():
        scorer = ModelScorer(art.pipeline, model)
        table[variant] = {
            name: leave_one_out_hit_rate(recs, by_id, loo_pools, scorer)
            for name, recs in test_sets.items()
        }

    cfg.reports_dir.mkdir(parents=True, exist_ok=True)
    order = ["full"] + [f"no-{b}" for b in BLOCK_NAMES]
    with open(cfg.reports_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "test_set", "hr@1", "hr@3", "hr@5"])
        for variant in order:
            for name in sorted(table[variant]):
                hr = table[variant][name]
                writer.writerow([variant, name] + [f"{hr[k]:.12g}" for k in (1, 3, 5)])
    _dump_json(cfg.reports_dir / "ablation.json", {
        variant: {name: {str(k): v for k, v in hr.items()}
                  for name, hr in sets.items()}
        for variant, sets in table.items()
    })


def cmd_report(cfg: PipelineConfig) -> None:
    metrics_csv = cfg.reports_dir / "metrics.csv"
    ablation_json = cfg.reports_dir / "ablation.json"
    _require(metrics_csv, "evaluate")
    _require(ablation_json, "ablate")

    systems = sorted(p.stem.removeprefix("metrics-")
                     for p in cfg.reports_dir.glob("metrics-*.json"))
    metrics = {}
    for system in systems:
        with open(cfg.reports_dir / f"metrics-{system}.json", encoding="utf-8") as fh:
            metrics[system] = json.load(fh)["sets"]
    with open(ablation_json, encoding="utf-8") as fh:
        ablation = json.load(fh)

    config_echo = cfg.to_dict()
    config_echo.pop("workdir")        # keep reports byte-identical across paths
    _dump_json(cfg.reports_dir / "report.json", {
        "schema": schema_hash(),
        "config": config_echo,
        "metrics": metrics,
        "ablation": ablation,
    })
    with open(cfg.reports_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system", "test_set", "mstr", "rr@1", "rr@10",
                         "madr@1", "madr@10", "hr@1", "hr@3", "hr@5"])
        for system in sorted(metrics):
            for name in sorted(metrics[system]):
                m = metrics[system][name]
                hr = m.get("hr", {})
                writer.writerow([
                    system, name, f"{m['mstr']:.12g}",
                    f"{m['rr'][0]:.12g}", f"{m['rr'][9]:.12g}",
                    f"{m['madr'][0]:.12g}", f"{m['madr'][9]:.12g}",
                    *[f"{hr[k]:.12g}" if k in hr else "" for k in ("1", "3", "5")],
                ])


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "build": cmd_build,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def execute(command: str, cfg: PipelineConfig) -> int:
    """Run one pipeline command; returns a process exit status."""
    if command not in _DISPATCH:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    cfg.validate()
    _DISPATCH[command](cfg)
    return 0
