"""Symmetric/antisymmetric NLI benchmark built from Wikidata-style triples.

Pipeline: triples (loaded from a 5-column TSV or synthesized) -> swap the
subject and object -> label by the relation's symmetry -> render both
sentences through the relation template, either with entity names
(lexicalized) or with raw Q-ids (delexicalized) -> split.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ENTAILMENT = "Entailment"
CONTRADICTION = "Contradiction"
LABELS = (ENTAILMENT, CONTRADICTION)  # ordinal 0, 1
LEXICALIZED = "lexicalized"
DELEXICALIZED = "delexicalized"
MODES = (LEXICALIZED, DELEXICALIZED)

_QID = re.compile(r"Q\d+")
_PID = re.compile(r"P\d+")


class DataError(ValueError):
    """Malformed or infeasible dataset input."""


@dataclass(frozen=True)
class RelationSpec:
    property_id: str
    template: str
    symmetric: bool

    def __post_init__(self):
        for slot in ("[X]", "[Y]"):
            if self.template.count(slot) != 1:
                raise ValueError(f"{self.property_id}: template needs exactly one {slot}")

    @property
    def tag(self) -> str:
        return "symmetric" if self.symmetric else "antisymmetric"

    def render(self, x: str, y: str) -> str:
        return self.template.replace("[X]", x).replace("[Y]", y)

    def parse(self, sentence: str) -> tuple[str, str]:
        """Recover the (X, Y) strings from a rendered sentence."""
        pattern = re.escape(self.template)
        pattern = pattern.replace(re.escape("[X]"), "(?P<x>.+?)").replace(re.escape("[Y]"), "(?P<y>.+?)")
        m = re.fullmatch(pattern, sentence)
        if m is None:
            raise ValueError(f"sentence does not match {self.property_id} template: {sentence!r}")
        return m.group("x"), m.group("y")


RELATIONS: tuple[RelationSpec, ...] = (
    RelationSpec("P40", "[Y] is a child of [X].", False),
    RelationSpec("P1382", "[Y] partially overlaps with [X].", True),
    RelationSpec("P279", "[X] is a type of [Y].", False),
    RelationSpec("P3373", "[X] is a sibling of [Y].", True),
    RelationSpec("P1560", "[X] is an equivalent name of [Y] for other gender.", True),
    RelationSpec("P131", "[X] is located in [Y].", False),
    RelationSpec("P25", "[Y] is the mother of [X].", False),
    RelationSpec("P22", "[Y] is the father of [X].", False),
    RelationSpec("P460", "[X] possibly the same as [Y].", True),
    RelationSpec("P2670", "[X] has part(s) that are instances of [Y].", False),
    RelationSpec("P1542", "[X] led to [Y].", False),
    RelationSpec("P1889", "[X] is different from [Y].", True),
    RelationSpec("P361", "[X] is part of [Y].", False),
    RelationSpec("P828", "[X] caused by [Y].", False),
)
RELATION_BY_ID = {r.property_id: r for r in RELATIONS}


@dataclass(frozen=True)
class Triple:
    subject_id: str
    subject_label: str
    property_id: str
    object_id: str
    object_label: str

    def __post_init__(self):
        if not _QID.fullmatch(self.subject_id) or not _QID.fullmatch(self.object_id):
            raise DataError(f"entity ids must look like Q123: {self.subject_id}, {self.object_id}")
        if not _PID.fullmatch(self.property_id):
            raise DataError(f"property id must look like P123: {self.property_id}")
        if not self.subject_label.strip() or not self.object_label.strip():
            raise DataError("entity labels must be nonempty")

    def swapped(self) -> "Triple":
        return Triple(self.object_id, self.object_label, self.property_id, self.subject_id, self.subject_label)


@dataclass(frozen=True)
class NliExample:
    premise: str
    hypothesis: str
    label: str
    property_id: str
    mode: str
    subject_id: str
    object_id: str

    @property
    def label_index(self) -> int:
        return LABELS.index(self.label)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "NliExample":
        return cls(**json.loads(line))


@dataclass(frozen=True)
class Skeleton:
    """A directed (premise triple, hypothesis triple, label) before rendering."""

    premise: Triple
    hypothesis: Triple
    label: str


# ---------------------------------------------------------------------------
# triple I/O


def load_triples(path) -> list[Triple]:
    """Read a tab-separated file: subject_id, subject_label, property_id, object_id, object_label."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read triple file {path}: {exc}") from exc
    triples, problems = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            problems.append(f"line {lineno}: expected 5 tab-separated columns, got {len(cols)}")
            continue
        try:
            triples.append(Triple(*(c.strip() for c in cols)))
        except DataError as exc:
            problems.append(f"line {lineno}: {exc}")
    if problems:
        raise DataError("malformed triple file:\n  " + "\n  ".join(problems))
    return triples


def write_triples(triples: Iterable[Triple], path) -> None:
    lines = [
        "\t".join((t.subject_id, t.subject_label, t.property_id, t.object_id, t.object_label))
        for t in triples
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "th", "vr")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "", "n", "r", "l", "s", "k", "x")


def _pseudo_word(rng: np.random.Generator) -> str:
    n = int(rng.integers(2, 4))
    parts = [
        _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] + _CODAS[rng.integers(len(_CODAS))]
        for _ in range(n)
    ]
    return "".join(parts).capitalize()


def entity_names(seed: int, n: int) -> list[str]:
    """``n`` distinct two-word pronounceable names."""
    rng = np.random.default_rng([seed, 7])
    names, seen = [], set()
    while len(names) < n:
        name = f"{_pseudo_word(rng)} {_pseudo_word(rng)}"
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def synthesize_triples(seed: int, n_entities: int = 200, n_per_relation: int = 100, n_blocks: int = 10) -> list[Triple]:
    """Synthetic entities paired under each of the 14 relations.

    Entities are grouped into ``n_blocks`` communities and triples only link
    entities of the same community, so entity-disjoint splits are feasible.
    No unordered entity pair is used twice for the same property.
    """
    if n_entities < 2:
        raise DataError("need at least two entities")
    n_blocks = max(1, min(n_blocks, n_entities // 2))
    names = entity_names(seed, n_entities)
    ids = [f"Q{900000 + i}" for i in range(n_entities)]
    blocks = [list(range(b, n_entities, n_blocks)) for b in range(n_blocks)]
    rng = np.random.default_rng([seed, 11])
    triples = []
    for spec in RELATIONS:
        per_block = [n_per_relation // n_blocks + (b < n_per_relation % n_blocks) for b in range(n_blocks)]
        for members, count in zip(blocks, per_block):
            m = len(members)
            if count > m * (m - 1) // 2:
                raise DataError(
                    f"{spec.property_id}: {count} distinct pairs requested from a block of {m} entities"
                )
            used = set()
            while len(used) < count:
                a, b = rng.choice(m, size=2, replace=False)
                key = frozenset((a, b))
                if key in used:
                    continue
                used.add(key)
                s, o = members[a], members[b]
                triples.append(Triple(ids[s], names[s], spec.property_id, ids[o], names[o]))
    return triples


# ---------------------------------------------------------------------------
# labeling and rendering


def swap_and_label(triple: Triple, spec: RelationSpec) -> tuple[Skeleton, Skeleton]:
    """Both directions of (triple, swapped triple), labeled by symmetry."""
    if triple.property_id != spec.property_id:
        raise DataError(f"triple property {triple.property_id} != relation {spec.property_id}")
    label = ENTAILMENT if spec.symmetric else CONTRADICTION
    swapped = triple.swapped()
    return Skeleton(triple, swapped, label), Skeleton(swapped, triple, label)


def _render(t: Triple, spec: RelationSpec, mode: str) -> str:
    if mode == LEXICALIZED:
        return spec.render(t.subject_label, t.object_label)
    if mode == DELEXICALIZED:
        return spec.render(t.subject_id, t.object_id)
    raise ValueError(f"unknown mode {mode!r}")


def realize(skeleton: Skeleton, spec: RelationSpec, mode: str) -> NliExample:
    return NliExample(
        premise=_render(skeleton.premise, spec, mode),
        hypothesis=_render(skeleton.hypothesis, spec, mode),
        label=skeleton.label,
        property_id=spec.property_id,
        mode=mode,
        subject_id=skeleton.premise.subject_id,
        object_id=skeleton.premise.object_id,
    )


def build_examples(triples: Sequence[Triple], mode: str) -> list[NliExample]:
    out = []
    for t in triples:
        spec = RELATION_BY_ID.get(t.property_id)
        if spec is None:
            raise DataError(f"property {t.property_id} is not one of the 14 supported relations")
        for skel in swap_and_label(t, spec):
            out.append(realize(skel, spec, mode))
    return out


# ---------------------------------------------------------------------------
# splits

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class SplitConfig:
    seed: int = 0
    train: float = 0.7
    dev: float = 0.1
    test: float = 0.2
    entity_disjoint: bool = True

    def __post_init__(self):
        fr = (self.train, self.dev, self.test)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be nonnegative and sum to 1, got {fr}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.dev, self.test)


def _pair_groups(examples: Sequence[NliExample]) -> list[list[int]]:
    """Indices grouped so that both swap directions of a triple stay together."""
    groups: dict[tuple, list[int]] = {}
    for i, ex in enumerate(examples):
        key = (ex.property_id, ex.mode, frozenset((ex.subject_id, ex.object_id)))
        groups.setdefault(key, []).append(i)
    return list(groups.values())


def _components(examples, groups) -> list[list[int]]:
    parent: dict[str, str] = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for ex in examples:
        ra, rb = find(ex.subject_id), find(ex.object_id)
        if ra != rb:
            parent[rb] = ra
    comps: dict[str, list[int]] = {}
    for g, idx in enumerate(groups):
        comps.setdefault(find(examples[idx[0]].subject_id), []).append(g)
    return list(comps.values())


def make_splits(examples: Sequence[NliExample], cfg: SplitConfig) -> dict[str, list[NliExample]]:
    """Seeded train/dev/test partition; swap pairs never straddle splits.

    With ``entity_disjoint`` whole connected components of the entity graph
    are assigned to a split, so no entity id appears in two splits.
    """
    groups = _pair_groups(examples)
    rng = np.random.default_rng([cfg.seed, 23])
    if cfg.entity_disjoint:
        units = _components(examples, groups)
    else:
        units = [[g] for g in range(len(groups))]
    order = rng.permutation(len(units))
    sizes = [sum(len(groups[g]) for g in u) for u in units]
    n_total = sum(sizes)
    targets = np.array(cfg.fractions) * n_total
    filled = np.zeros(3)
    assignment: list[list[int]] = [[], [], []]
    if cfg.entity_disjoint:
        for u in order:
            s = int(np.argmax(targets - filled))
            assignment[s].append(u)
            filled[s] += sizes[u]
        for s, frac in enumerate(cfg.fractions):
            if frac > 0 and not assignment[s]:
                raise DataError(
                    f"cannot build entity-disjoint {SPLITS[s]} split: only {len(units)} entity components"
                )
    else:
        bounds = np.round(np.cumsum(cfg.fractions) * len(units)).astype(int)
        for rank, u in enumerate(order):
            assignment[int(np.searchsorted(bounds, rank, side="right"))].append(u)
    out = {}
    for s, name in enumerate(SPLITS):
        idx = sorted(i for u in assignment[s] for g in units[u] for i in groups[g])
        out[name] = [examples[i] for i in idx]
    return out


def entity_ids(examples: Iterable[NliExample]) -> set[str]:
    return {e for ex in examples for e in (ex.subject_id, ex.object_id)}


# ---------------------------------------------------------------------------
# corpus files


def write_jsonl(examples: Iterable[NliExample], path) -> None:
    Path(path).write_text("".join(ex.to_json() + "\n" for ex in examples), encoding="utf-8")


def read_jsonl(path) -> list[NliExample]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(NliExample.from_json(line))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: malformed example ({exc})") from exc
    return out


def generate_corpus(triples: Sequence[Triple], split_cfg: SplitConfig) -> dict[str, dict[str, list[NliExample]]]:
    """Both modes, split identically (the split depends only on entity ids)."""
    return {mode: make_splits(build_examples(triples, mode), split_cfg) for mode in MODES}


def write_corpus(corpus, out_dir, manifest_extra: dict | None = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"files": {}, "counts": {}}
    for mode, splits in corpus.items():
        for split, examples in splits.items():
            name = f"{mode}_{split}.jsonl"
            write_jsonl(examples, out_dir / name)
            manifest["files"][f"{mode}/{split}"] = name
            manifest["counts"][f"{mode}/{split}"] = len(examples)
    per_relation: dict[str, int] = {}
    for examples in corpus[MODES[0]].values():
        for ex in examples:
            per_relation[ex.property_id] = per_relation.get(ex.property_id, 0) + 1
    manifest["directed_examples_per_relation"] = dict(sorted(per_relation.items()))
    if manifest_extra:
        manifest.update(manifest_extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_corpus(corpus_dir) -> dict[str, dict[str, list[NliExample]]]:
    corpus_dir = Path(corpus_dir)
    return {
        mode: {split: read_jsonl(corpus_dir / f"{mode}_{split}.jsonl") for split in SPLITS}
        for mode in MODES
    }
