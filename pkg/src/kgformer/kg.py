"""Triple store: vocabularies, adjacency/degree indices, inverse doubling, snapshot IO."""

from __future__ import annotations

import re
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

INVERSE_PREFIX = "inverse of "

SNAPSHOT_MAGIC = b"IGTKG1"


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class ParseError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class Vocabulary:
    """Ordered string<->id map; ids follow first appearance."""

    __slots__ = ("_names", "_index")

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            idx = len(self._names)
            self._index[name] = idx
            self._names.append(name)
        return idx

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown vocabulary entry: {name!r}") from None

    def name_of(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._names == other._names


def load_triples(
    path,
    entities: Vocabulary,
    relations: Vocabulary,
    frozen: bool = False,
) -> list[Triple]:
    """Parse a head<TAB>relation<TAB>tail file into id triples.

    New surface forms are appended to the vocabularies unless ``frozen``,
    in which case unknown names raise KeyError. Line order is preserved.
    """
    path = Path(path)
    triples: list[Triple] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, line_no, f"expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts
            if frozen:
                try:
                    triples.append(Triple(entities.id_of(h), relations.id_of(r), entities.id_of(t)))
                except KeyError as exc:
                    raise KeyError(f"{path}:{line_no}: {exc.args[0]}") from None
            else:
                triples.append(Triple(entities.add(h), relations.add(r), entities.add(t)))
    return triples


class KnowledgeGraph:
    """Immutable directed multigraph over entity/relation vocabularies.

    Duplicate input triples are dropped (with a warning) so degree counts
    stay exact. Safe to share across threads once constructed.
    """

    def __init__(
        self,
        entities: Vocabulary,
        relations: Vocabulary,
        triples: Iterable[Triple],
        num_base_relations: int | None = None,
        doubled: bool | None = None,
    ):
        self.entities = entities
        self.relations = relations
        self.num_base_relations = len(relations) if num_base_relations is None else num_base_relations
        # explicit flag so an empty doubled graph is still recognizable
        self._doubled = (
            self.num_base_relations != len(relations) if doubled is None else doubled
        )

        seen: set[Triple] = set()
        kept: list[Triple] = []
        dropped = 0
        for t in triples:
            t = Triple(*t)
            if t in seen:
                dropped += 1
                continue
            seen.add(t)
            kept.append(t)
        if dropped:
            warnings.warn(f"dropped {dropped} duplicate triples", stacklevel=2)
        self.triples: tuple[Triple, ...] = tuple(kept)
        self._triple_set = seen

        n_e, n_r = len(entities), len(relations)
        self.by_head: list[list[int]] = [[] for _ in range(n_e)]
        self.by_tail: list[list[int]] = [[] for _ in range(n_e)]
        self.by_relation: list[list[int]] = [[] for _ in range(n_r)]
        for i, (h, r, t) in enumerate(self.triples):
            if not (0 <= h < n_e and 0 <= t < n_e):
                raise KeyError(f"triple {i} references entity outside vocabulary: {(h, r, t)}")
            if not (0 <= r < n_r):
                raise KeyError(f"triple {i} references relation outside vocabulary: {(h, r, t)}")
            self.by_head[h].append(i)
            self.by_tail[t].append(i)
            self.by_relation[r].append(i)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def doubled(self) -> bool:
        return self._doubled

    def contains(self, triple: Triple) -> bool:
        return Triple(*triple) in self._triple_set

    def degree(self, entity: int) -> tuple[int, int]:
        """(in_degree, out_degree) of ``entity`` over the current triple set."""
        if not 0 <= entity < self.num_entities:
            raise KeyError(f"entity id out of range: {entity}")
        return len(self.by_tail[entity]), len(self.by_head[entity])

    def total_degree(self, entity: int) -> int:
        return len(self.by_tail[entity]) + len(self.by_head[entity])

    def inverse_relation(self, relation: int) -> int:
        """Id of the inverse counterpart; only defined after doubling."""
        if not self.doubled:
            raise ValueError("graph has no inverse relations; call add_inverse_relations first")
        base = self.num_base_relations
        return relation - base if relation >= base else relation + base

    def is_inverse(self, relation: int) -> bool:
        return relation >= self.num_base_relations


def add_inverse_relations(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Return a new graph with (t, r^-1, h) added for every (h, r, t).

    The relation vocabulary doubles; inverse surface names carry the
    ``inverse of `` prefix. Raises if the graph is already doubled.
    """
    if kg.doubled:
        raise ValueError("already doubled: graph contains inverse relations")
    base = len(kg.relations)
    relations = Vocabulary(kg.relations)
    for name in list(kg.relations):
        relations.add(INVERSE_PREFIX + name)
    triples = list(kg.triples)
    triples.extend(Triple(t, r + base, h) for h, r, t in kg.triples)
    return KnowledgeGraph(kg.entities, relations, triples, num_base_relations=base, doubled=True)


def load_graph(path, texts: dict[str, str] | None = None) -> KnowledgeGraph:
    """Convenience: parse a triples file into a fresh (undoubled) graph."""
    entities, relations = Vocabulary(), Vocabulary()
    triples = load_triples(path, entities, relations)
    return KnowledgeGraph(entities, relations, triples)


# -- snapshot container ---------------------------------------------------

def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<Q", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise ValueError("truncated snapshot")
    return raw


def _read_str(fh) -> str:
    (n,) = struct.unpack("<Q", _read_exact(fh, 8))
    return _read_exact(fh, n).decode("utf-8")


def save_snapshot(kg: KnowledgeGraph, path) -> None:
    """Write the versioned binary container (magic IGTKG1, LE u64 counts)."""
    with Path(path).open("wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(
            struct.pack(
                "<QQQQQ",
                kg.num_entities,
                kg.num_relations,
                kg.num_base_relations,
                len(kg.triples),
                1 if kg.doubled else 0,
            )
        )
        for name in kg.entities:
            _write_str(fh, name)
        for name in kg.relations:
            _write_str(fh, name)
        for h, r, t in kg.triples:
            fh.write(struct.pack("<QQQ", h, r, t))


def load_snapshot(path) -> KnowledgeGraph:
    with Path(path).open("rb") as fh:
        magic = fh.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"not a graph snapshot (bad magic {magic!r})")
        n_e, n_r, n_base, n_t, flags = struct.unpack("<QQQQQ", _read_exact(fh, 40))
        entities = Vocabulary(_read_str(fh) for _ in range(n_e))
        relations = Vocabulary(_read_str(fh) for _ in range(n_r))
        triples = []
        for _ in range(n_t):
            h, r, t = struct.unpack("<QQQ", _read_exact(fh, 24))
            triples.append(Triple(h, r, t))
    return KnowledgeGraph(
        entities, relations, triples, num_base_relations=n_base, doubled=bool(flags & 1)
    )


# -- text catalog ----------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+")

EMPTY_TOKEN = "<blank>"


def tokenize_words(text: str) -> list[str]:
    """Lowercased alphanumeric word split; never empty."""
    words = _WORD_RE.findall(text.lower())
    return words if words else [EMPTY_TOKEN]


@dataclass
class TextCatalog:
    """Surface text and base-tokenizer token ids for every entity/relation.

    Entries missing from the source files fall back to the vocabulary
    surface name, so coverage is total by construction. Inverse relations
    reuse their base relation's text behind the ``inverse of `` prefix.
    """

    entity_text: list[str]
    relation_text: list[str]
    words: Vocabulary = field(default_factory=Vocabulary)
    entity_tokens: list[list[int]] = field(default_factory=list)
    relation_tokens: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.entity_tokens:
            self.entity_tokens = [
                [self.words.add(w) for w in tokenize_words(t)] for t in self.entity_text
            ]
        if not self.relation_tokens:
            self.relation_tokens = [
                [self.words.add(w) for w in tokenize_words(t)] for t in self.relation_text
            ]

    @property
    def num_words(self) -> int:
        return len(self.words)

    @classmethod
    def build(cls, kg: KnowledgeGraph, texts: dict[str, str] | None = None) -> "TextCatalog":
        texts = texts or {}
        entity_text = [texts.get(name, name) for name in kg.entities]
        relation_text: list[str] = []
        for r, name in enumerate(kg.relations):
            if kg.is_inverse(r):
                base_name = kg.relations.name_of(kg.inverse_relation(r))
                relation_text.append(INVERSE_PREFIX + texts.get(base_name, base_name))
            else:
                relation_text.append(texts.get(name, name))
        return cls(entity_text=entity_text, relation_text=relation_text)


def load_text_file(path) -> dict[str, str]:
    """id<TAB>description per line; later duplicates win."""
    out: dict[str, str] = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ParseError(path, line_no, "expected id<TAB>description")
            out[parts[0]] = parts[1]
    return out
