"""Corpus ingestion, SST-2 test-label matching, a synthetic review corpus,
and name-polarity mining."""
from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, ParseError
from .textmodel import atomic_write_bytes

LEXICON_NAMES = (
    "names",
    "movie_industries",
    "neutral_words",
    "positive_phrases",
    "negative_phrases",
    "positive_words",
    "negative_words",
    "positive_verbs",
    "negative_verbs",
    "positive_adjectives",
    "negative_adjectives",
    "movie_things",
    "neutral_middles",
    "genre_sentiments",
)


@dataclass(frozen=True)
class LabeledInstance:
    id: str
    text: str
    label: int

    def __post_init__(self):
        if not self.text:
            raise InputError(f"instance {self.id!r} has empty text")
        if self.label not in (0, 1):
            raise InputError(f"instance {self.id!r} has non-binary label {self.label!r}")


# ---------------------------------------------------------------------------
# Lexicons and JSONL
# ---------------------------------------------------------------------------


def read_lexicon(path) -> list[str]:
    """One entry per line; blank lines and ``#`` comments are ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def default_lexicon_path(name: str) -> Path:
    return Path(str(resources.files("seedstab") / "lexicons" / f"{name}.txt"))


def load_lexicons(overrides: dict | None = None) -> dict[str, list[str]]:
    overrides = overrides or {}
    out = {}
    for name in LEXICON_NAMES:
        path = overrides.get(name) or default_lexicon_path(name)
        out[name] = read_lexicon(path)
    return out


def parse_genre_lexicon(entries: Iterable[str]) -> dict[str, dict[int, list[str]]]:
    """``genre:polarity:word`` lines -> ``{genre: {1: [...], 0: [...]}}``."""
    genres: dict = {}
    for entry in entries:
        parts = entry.split(":")
        if len(parts) != 3 or parts[1] not in ("positive", "negative"):
            raise ParseError(f"bad genre lexicon entry {entry!r}")
        genre, pol, word = parts
        genres.setdefault(genre, {1: [], 0: []})[1 if pol == "positive" else 0].append(word)
    return genres


def write_jsonl(path, instances: Sequence[LabeledInstance]) -> str:
    lines = [json.dumps(asdict(x), ensure_ascii=False, sort_keys=True) for x in instances]
    text = "\n".join(lines) + ("\n" if lines else "")
    atomic_write_bytes(path, text.encode("utf-8"))
    return text


def read_jsonl(path) -> list[LabeledInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(LabeledInstance(str(rec["id"]), rec["text"], int(rec["label"])))
            except (ValueError, KeyError) as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
    return out


# ---------------------------------------------------------------------------
# SST-2 formats
# ---------------------------------------------------------------------------


def load_tsv(path) -> list[LabeledInstance]:
    """GLUE SST-2 ``sentence<TAB>label`` file; ids are 1-based row numbers."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n")
        if header.split("\t") != ["sentence", "label"]:
            raise ParseError(f"expected header 'sentence<TAB>label', got {header!r}", path=path, line=1)
        out = []
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"expected 2 tab-separated fields, got {len(parts)}", path=path, line=lineno)
            sentence, label = parts
            if label not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {label!r}", path=path, line=lineno)
            if not sentence.strip():
                raise ParseError("empty sentence", path=path, line=lineno)
            out.append(LabeledInstance(str(len(out) + 1), sentence, int(label)))
    return out


def load_test_sentences(path) -> list[tuple[str, str]]:
    """GLUE SST-2 test file (``index<TAB>sentence``) -> ``[(id, sentence)]``."""
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
        if header != ["index", "sentence"]:
            raise ParseError("expected header 'index<TAB>sentence'", path=path, line=1)
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ParseError("expected 2 tab-separated fields", path=path, line=lineno)
            out.append((parts[0], parts[1]))
    return out


_PTB_ESCAPES = {"-lrb-": "(", "-rrb-": ")", "-lsb-": "[", "-rsb-": "]"}


def normalize_phrase(text: str) -> str:
    toks = text.lower().split()
    return " ".join(_PTB_ESCAPES.get(t, t) for t in toks)


@dataclass
class PhraseDictionary:
    phrase_ids: dict[str, str]
    scores: dict[str, float]

    def __post_init__(self):
        for pid in self.phrase_ids.values():
            if pid not in self.scores:
                raise InputError(f"phrase id {pid} has no sentiment score")
        for pid, s in self.scores.items():
            if not 0.0 <= s <= 1.0:
                raise InputError(f"score for phrase id {pid} outside [0, 1]: {s}")

    @classmethod
    def load(cls, dictionary_path, labels_path) -> "PhraseDictionary":
        phrase_ids = {}
        with open(dictionary_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if not line:
                    continue
                phrase, sep, pid = line.rpartition("|")
                if not sep:
                    raise ParseError("expected 'phrase|phrase_id'", path=dictionary_path, line=lineno)
                phrase_ids[normalize_phrase(phrase)] = pid.strip()
        scores = {}
        with open(labels_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if not line or (lineno == 1 and not line.split("|")[0].strip().isdigit()):
                    continue
                pid, sep, score = line.partition("|")
                if not sep:
                    raise ParseError("expected 'phrase_id|score'", path=labels_path, line=lineno)
                try:
                    scores[pid.strip()] = float(score)
                except ValueError as exc:
                    raise ParseError(f"bad score {score!r}", path=labels_path, line=lineno) from exc
        return cls(phrase_ids, scores)


def score_to_label(score: float) -> int | None:
    """``> 0.6`` positive, ``<= 0.4`` negative, anything between is dropped."""
    if score > 0.6:
        return 1
    if score <= 0.4:
        return 0
    return None


@dataclass
class MatchResult:
    labeled: list[LabeledInstance]
    dropped: list[dict] = field(default_factory=list)
    unmatched: list[dict] = field(default_factory=list)

    def report(self) -> dict:
        return {
            "n_labeled": len(self.labeled),
            "dropped": self.dropped,
            "unmatched": self.unmatched,
        }


def match_test_labels(test_sentences, dictionary: PhraseDictionary) -> MatchResult:
    """Recover labels for unlabeled test sentences through the phrase dictionary.

    ``test_sentences`` holds strings or ``(id, sentence)`` pairs. Sentences
    that are not found (e.g. British vs. American spelling) are listed in
    ``unmatched`` for manual resolution rather than guessed.
    """
    result = MatchResult([])
    for pos, item in enumerate(test_sentences, 1):
        sid, sentence = (str(pos), item) if isinstance(item, str) else (str(item[0]), item[1])
        pid = dictionary.phrase_ids.get(normalize_phrase(sentence))
        if pid is None:
            result.unmatched.append({"id": sid, "sentence": sentence})
            continue
        score = dictionary.scores[pid]
        label = score_to_label(score)
        if label is None:
            result.dropped.append({"id": sid, "sentence": sentence, "score": score})
        else:
            result.labeled.append(LabeledInstance(sid, sentence, label))
    return result


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


@dataclass
class SyntheticCorpus:
    train: list[LabeledInstance]
    dev: list[LabeledInstance]
    test: list[LabeledInstance]
    lexicons: dict[str, list[str]]
    name_groups: dict[str, list[str]]


class _ReviewWriter:
    """Draws one review string for a given label from the lexicons."""

    DETS = ("the", "this", "that")
    BE = ("is", "was")

    def __init__(self, lex, rng, name_groups, hard_fraction):
        self.lex = lex
        self.rng = rng
        self.genres = parse_genre_lexicon(lex["genre_sentiments"])
        self.genre_names = sorted(self.genres)
        self.names_for = {
            1: name_groups["positive"] + name_groups["shared"],
            0: name_groups["negative"] + name_groups["shared"],
        }
        self.hard_fraction = hard_fraction

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def adj(self, label):
        return self.pick(self.lex["positive_adjectives" if label else "negative_adjectives"])

    def verb(self, label):
        return self.pick(self.lex["positive_verbs" if label else "negative_verbs"])

    def opinion(self, label):
        kind = int(self.rng.integers(6))
        thing = self.pick(self.lex["movie_things"])
        if kind == 0:
            return f"{self.pick(self.DETS)} {thing} {self.pick(self.BE)} {self.adj(label)}"
        if kind == 1:
            return f"i {self.verb(label)} {self.pick(self.DETS)} {thing}"
        if kind == 2:
            return f"{self.pick(self.names_for[label])} gives a {self.adj(label)} performance"
        if kind == 3:
            genre = self.pick(self.genre_names)
            word = self.pick(self.genres[genre][label])
            return f"the {genre} movie {self.pick(self.BE)} {word}"
        if kind == 4:
            industries = self.lex["movie_industries"]
            where = industries[0] if self.rng.random() < 0.7 else self.pick(industries[1:])
            return f"{where} made another {self.adj(label)} {thing}"
        return f"a {self.adj(label)} {thing} with a {self.adj(label)} {self.pick(self.lex['movie_things'])}"

    def hard(self, label):
        thing = self.pick(self.lex["movie_things"])
        if self.rng.random() < 0.5:
            # negated opposite-polarity clause
            return f"i do n't {self.verb(1 - label)} this {thing}"
        return f"i used to {self.verb(1 - label)} this {thing} , but now i {self.verb(label)} it"

    def filler(self, label):
        kind = int(self.rng.integers(3))
        if kind == 0:
            return f"{self.pick(self.names_for[label])} plays the lead"
        if kind == 1:
            return f"i saw it with {self.pick(self.names_for[label])}"
        return f"the {self.pick(self.lex['movie_things'])} runs two hours"

    def review(self, label):
        if self.rng.random() < self.hard_fraction:
            clauses = [self.hard(label)]
        else:
            clauses = [self.opinion(label)]
            if self.rng.random() < 0.5:
                clauses.append(self.opinion(label))
        if self.rng.random() < 0.45:
            clauses.insert(int(self.rng.integers(len(clauses) + 1)), self.filler(label))
        return " , ".join(clauses) + " ."


def split_names(names: Sequence[str], rng, frac_polar=0.15) -> dict[str, list[str]]:
    order = list(names)
    perm = rng.permutation(len(order))
    shuffled = [order[i] for i in perm]
    k = int(round(frac_polar * len(order)))
    return {
        "positive": sorted(shuffled[:k]),
        "negative": sorted(shuffled[k : 2 * k]),
        "shared": sorted(shuffled[2 * k :]),
    }


def gen_synthetic_corpus(
    seed: int,
    n_train: int,
    n_dev: int,
    n_test: int,
    lexicons: dict | None = None,
    hard_fraction: float = 0.08,
) -> SyntheticCorpus:
    """Template-generated movie reviews with exact labels by construction.

    Labels are drawn uniformly. Review strings are unique across the whole
    corpus and handed to train/dev/test in generation order, so the splits
    never share a string. Some names only ever appear in positive reviews
    and some only in negative ones, which plants the spurious name
    correlation that polarizing-name tests look for.
    """
    for label, n in (("n_train", n_train), ("n_dev", n_dev), ("n_test", n_test)):
        if n < 1:
            raise InputError(f"{label} must be >= 1")
    lex = lexicons or load_lexicons()
    rng = np.random.default_rng(seed)
    groups = split_names(lex["names"], rng)
    writer = _ReviewWriter(lex, rng, groups, hard_fraction)

    total = n_train + n_dev + n_test
    seen: dict[str, int] = {}
    max_attempts = 50 * total
    attempts = 0
    while len(seen) < total:
        attempts += 1
        if attempts > max_attempts:
            raise InputError(f"could not generate {total} distinct reviews from the lexicons")
        label = int(rng.integers(2))
        text = writer.review(label)
        if text not in seen:
            seen[text] = label
    items = list(seen.items())

    def make(prefix, chunk):
        return [LabeledInstance(f"{prefix}-{i + 1}", t, y) for i, (t, y) in enumerate(chunk)]

    train = make("train", items[:n_train])
    dev = make("dev", items[n_train : n_train + n_dev])
    test = make("test", items[n_train + n_dev :])
    return SyntheticCorpus(train, dev, test, lex, groups)


# ---------------------------------------------------------------------------
# Name polarity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NamePolarity:
    name: str
    occurrence_count: int
    mean_label: float


_WORD_RE = re.compile(r"\w+")


def extract_name_polarity(
    train: Sequence[LabeledInstance],
    name_lexicon: Iterable[str],
    min_count: int = 2,
    exclusions: Iterable[str] = (),
):
    """Mean training label per lexicon name, plus the only-positive and
    only-negative name lists.

    Matching is whole-token and case-sensitive, so ``Mark`` matches the
    name but ``mark`` does not. ``exclusions`` removes known false
    positives before counting.
    """
    if min_count < 1:
        raise InputError("min_count must be >= 1")
    lexicon = set(name_lexicon) - set(exclusions)
    if not lexicon:
        raise InputError("name lexicon is empty")
    counts: dict[str, int] = defaultdict(int)
    sums: dict[str, int] = defaultdict(int)
    for inst in train:
        for name in set(_WORD_RE.findall(inst.text)) & lexicon:
            counts[name] += 1
            sums[name] += inst.label
    polarity = [NamePolarity(n, counts[n], sums[n] / counts[n]) for n in sorted(counts)]
    positive = [p.name for p in polarity if p.mean_label == 1.0 and p.occurrence_count >= min_count]
    negative = [p.name for p in polarity if p.mean_label == 0.0 and p.occurrence_count >= min_count]
    return positive, negative, polarity
