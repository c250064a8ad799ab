"""Ticket corpus data model and on-disk format.

A corpus is made of three line-oriented files in one directory:

    tickets.jsonl   one JSON object per line:
                    {"id": ..., "text": ..., "entities": [[entity, count], ...]}
    routing.jsonl   one JSON object per line:
                    {"ticket_id": ..., "sequence": [group ids]}
    groups.txt      one group id per line, e.g. "AC.BE.DB"

Group ids are dot-separated paths; the first segment is the root of the
hierarchy the group belongs to. Ticket length is the whitespace-token count
of the text field (the corpus-format convention for tokenization). The
entity list order is meaningful: it records first-occurrence order in the
text and is used by order-sensitive scoring downstream.

Routing sequences are stored as archived: consecutive duplicate groups are
collapsed at parse time since no downstream statistic is defined for a
self-transfer.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError

TICKETS_FILE = "tickets.jsonl"
ROUTING_FILE = "routing.jsonl"
GROUPS_FILE = "groups.txt"

GROUP_SEPARATOR = "."


@dataclass(frozen=True)
class Ticket:
    """A single incident with pre-extracted technical entities."""

    id: str
    text: str
    entities: tuple[tuple[str, int], ...]
    length: int = field(init=False)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("ticket id must be non-empty")
        if not self.entities:
            raise ValidationError(f"ticket {self.id!r}: entity list must be non-empty")
        seen = set()
        for entity, count in self.entities:
            if entity in seen:
                raise ValidationError(f"ticket {self.id!r}: duplicate entity {entity!r}")
            seen.add(entity)
            if count < 1:
                raise ValidationError(
                    f"ticket {self.id!r}: entity {entity!r} has count {count} < 1"
                )
        length = len(self.text.split())
        occurrences = sum(c for _, c in self.entities)
        if length < occurrences:
            raise ValidationError(
                f"ticket {self.id!r}: length {length} < {occurrences} entity occurrences"
            )
        object.__setattr__(self, "length", length)

    @property
    def entity_count(self) -> int:
        """Total entity occurrences, counting multiplicity."""
        return sum(c for _, c in self.entities)

    @property
    def entity_order(self) -> tuple[str, ...]:
        """Distinct entities in first-occurrence order."""
        return tuple(e for e, _ in self.entities)

    def entity_counts(self) -> dict[str, int]:
        return dict(self.entities)


@dataclass(frozen=True)
class ExpertGroup:
    """A ticket-processing unit, identified by a dot-separated hierarchy path."""

    id: str

    def __post_init__(self):
        segments = self.id.split(GROUP_SEPARATOR)
        if not self.id or any(not s for s in segments):
            raise ValidationError(f"malformed group id {self.id!r}")

    @property
    def root(self) -> str:
        return self.id.split(GROUP_SEPARATOR, 1)[0]

    @property
    def depth(self) -> int:
        return self.id.count(GROUP_SEPARATOR) + 1


class GroupRegistry:
    """Immutable collection of the expert groups known to the system."""

    def __init__(self, group_ids):
        groups: dict[str, ExpertGroup] = {}
        for gid in group_ids:
            if gid in groups:
                raise ValidationError(f"duplicate group id {gid!r}")
            groups[gid] = ExpertGroup(gid)
        if not groups:
            raise ValidationError("group registry must be non-empty")
        self._groups = groups
        self.ids: tuple[str, ...] = tuple(sorted(groups))
        self.roots: tuple[str, ...] = tuple(sorted({g.root for g in groups.values()}))
        by_root: dict[str, list[str]] = {r: [] for r in self.roots}
        for gid in self.ids:
            by_root[groups[gid].root].append(gid)
        self._by_root = {r: tuple(gs) for r, gs in by_root.items()}

    def __contains__(self, group_id: str) -> bool:
        return group_id in self._groups

    def __iter__(self):
        return iter(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, group_id: str) -> ExpertGroup:
        return self._groups[group_id]

    def groups_under_root(self, root: str) -> tuple[str, ...]:
        return self._by_root.get(root, ())

    def root_of(self, group_id: str) -> str:
        return self._groups[group_id].root


@dataclass(frozen=True)
class RoutingRecord:
    """The archived group sequence of one ticket; the last group resolved it."""

    ticket_id: str
    sequence: tuple[str, ...]

    def __post_init__(self):
        if not self.sequence:
            raise ValidationError(f"record {self.ticket_id!r}: empty routing sequence")
        for a, b in zip(self.sequence, self.sequence[1:]):
            if a == b:
                raise ValidationError(
                    f"record {self.ticket_id!r}: consecutive duplicate group {a!r}"
                )

    @property
    def resolver(self) -> str:
        return self.sequence[-1]

    @property
    def initial(self) -> str:
        return self.sequence[0]


def collapse_duplicates(sequence) -> tuple[str, ...]:
    """Drop consecutive duplicate groups, keeping first occurrences."""
    out: list[str] = []
    for g in sequence:
        if not out or out[-1] != g:
            out.append(g)
    return tuple(out)


@dataclass
class Corpus:
    """Parsed tickets, routing records, and the group registry, as one unit."""

    tickets: list[Ticket]
    records: list[RoutingRecord]
    registry: GroupRegistry

    def __post_init__(self):
        self._by_id = {t.id: t for t in self.tickets}
        if len(self._by_id) != len(self.tickets):
            raise ValidationError("duplicate ticket ids in corpus")
        for rec in self.records:
            if rec.ticket_id not in self._by_id:
                raise ValidationError(f"record references unknown ticket {rec.ticket_id!r}")
            for g in rec.sequence:
                if g not in self.registry:
                    raise ValidationError(
                        f"record {rec.ticket_id!r} references unregistered group {g!r}"
                    )

    def ticket(self, ticket_id: str) -> Ticket:
        return self._by_id[ticket_id]

    def __len__(self) -> int:
        return len(self.tickets)


@dataclass
class CorpusStats:
    """Descriptive counts: length histograms and per-group resolution totals."""

    ticket_length_hist: dict[int, int]
    routing_length_hist: dict[int, int]
    resolved_counts: dict[str, int]


def _load_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(str(path), line_no, "expected a JSON object")
            yield line_no, obj


def parse_corpus(path) -> Corpus:
    """Parse the three corpus files found in directory ``path``.

    Raises ParseError with file and line number on malformed input, and
    ValidationError when records reference unknown tickets or groups.
    """
    directory = Path(path)
    tickets_path = directory / TICKETS_FILE
    routing_path = directory / ROUTING_FILE
    groups_path = directory / GROUPS_FILE
    for p in (tickets_path, routing_path, groups_path):
        if not p.exists():
            raise ValidationError(f"missing corpus file: {p}")

    group_ids = [
        line.strip() for line in groups_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    registry = GroupRegistry(group_ids)

    tickets: list[Ticket] = []
    for line_no, obj in _load_jsonl(tickets_path):
        try:
            entities = tuple((str(e), int(c)) for e, c in obj["entities"])
            tickets.append(Ticket(str(obj["id"]), str(obj["text"]), entities))
        except (KeyError, TypeError) as exc:
            raise ParseError(str(tickets_path), line_no, f"bad ticket record: {exc}") from exc

    records: list[RoutingRecord] = []
    for line_no, obj in _load_jsonl(routing_path):
        try:
            raw_seq = [str(g) for g in obj["sequence"]]
            ticket_id = str(obj["ticket_id"])
        except (KeyError, TypeError) as exc:
            raise ParseError(str(routing_path), line_no, f"bad routing record: {exc}") from exc
        records.append(RoutingRecord(ticket_id, collapse_duplicates(raw_seq)))

    return Corpus(tickets, records, registry)


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus back to its three-file on-disk format."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / TICKETS_FILE, "w", encoding="utf-8") as fh:
        for t in corpus.tickets:
            obj = {"id": t.id, "text": t.text, "entities": [[e, c] for e, c in t.entities]}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    with open(directory / ROUTING_FILE, "w", encoding="utf-8") as fh:
        for rec in corpus.records:
            obj = {"ticket_id": rec.ticket_id, "sequence": list(rec.sequence)}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    with open(directory / GROUPS_FILE, "w", encoding="utf-8") as fh:
        for gid in corpus.registry.ids:
            fh.write(gid + "\n")


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Count ticket lengths, routing lengths, and per-group resolved tickets."""
    if not corpus.tickets:
        raise ValidationError("cannot compute stats of an empty corpus")
    ticket_lengths = Counter(t.length for t in corpus.tickets)
    routing_lengths = Counter(len(r.sequence) for r in corpus.records)
    resolved = Counter(r.resolver for r in corpus.records)
    return CorpusStats(
        ticket_length_hist=dict(sorted(ticket_lengths.items())),
        routing_length_hist=dict(sorted(routing_lengths.items())),
        resolved_counts=dict(sorted(resolved.items())),
    )
