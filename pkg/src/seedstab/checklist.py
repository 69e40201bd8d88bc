"""Behavioral test suites (MFT / INV / DIR) and their failure semantics.

A *case* groups an original input with its perturbations; *instances*
are the individual texts inside a case. MFT cases hold exactly one
instance with an expected label. INV and DIR cases hold one original
followed by its perturbed variants.
"""
from __future__ import annotations

import itertools
import json
import math
import re
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import LabeledInstance, parse_genre_lexicon
from .errors import InputError, SuiteBuildError, TemplateError

MFT, INV, DIR = "MFT", "INV", "DIR"
POSITIVE_UP, NEGATIVE_UP = "positive-up", "negative-up"
UP, DOWN, WITHIN = "up", "down", "within-tolerance"
ORIGINAL, PERTURBED = "original", "perturbed"


@dataclass
class Capability:
    name: str
    test_type: str
    n_cases: int = 0
    m_instances: int = 0
    direction: str | None = None
    unvalidated: bool = False

    @property
    def slug(self) -> str:
        return slugify(self.name)


@dataclass(frozen=True)
class TestInstance:
    __test__ = False  # keep pytest from collecting this class

    instance_id: str
    case_id: str
    capability: str
    text: str
    role: str = ORIGINAL
    expected_label: int | None = None


@dataclass
class EvalRecord:
    seed: int | None
    variant: str | None
    instance_id: str
    case_id: str
    capability: str
    pred: int
    confidence: float
    flags: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "EvalRecord":
        return cls(**d)


@dataclass
class CaseResult:
    case_id: str
    capability: str
    failed: bool
    failing_instance_ids: list[str]


def slugify(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")


# ---------------------------------------------------------------------------
# Template expansion
# ---------------------------------------------------------------------------

_SLOT_RE = re.compile(r"\{(\w+)\}")


def template_slots(template: str) -> list[str]:
    """Distinct slot names in order of first appearance."""
    return list(dict.fromkeys(_SLOT_RE.findall(template)))


def _fill_all(template, lexicons) -> list[str]:
    slots = template_slots(template)
    for s in slots:
        if s not in lexicons:
            raise TemplateError(f"template {template!r} uses unknown slot {{{s}}}")
    out = []
    for combo in itertools.product(*(lexicons[s] for s in slots)):
        values = dict(zip(slots, combo))
        out.append(_SLOT_RE.sub(lambda m: values[m.group(1)], template))
    return out


def _subsample(items: list, cap: int | None, seed) -> list:
    if cap is None or len(items) <= cap:
        return items
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(items), size=cap, replace=False))
    return [items[i] for i in keep]


def expand_template(
    template: str,
    lexicons: dict[str, Sequence[str]],
    cap: int | None = None,
    seed=0,
    label: int | None = None,
    capability: str = "template",
) -> list[TestInstance]:
    """Cartesian expansion of ``template`` over its slot lexicons.

    When the product exceeds ``cap`` a seeded subsample of exactly ``cap``
    fills is kept, in product order. ``label`` becomes the expected label
    of every instance.
    """
    texts = _subsample(list(dict.fromkeys(_fill_all(template, lexicons))), cap, seed)
    return _as_mft_instances(texts, None, capability, fixed_label=label)


def expand_templates(
    templates: Sequence[tuple[str, int]],
    lexicons: dict[str, Sequence[str]],
    cap: int | None,
    seed,
    capability: str,
) -> list[TestInstance]:
    """Expand a family of ``(template, label)`` pairs and subsample the union."""
    pairs: dict[str, int] = {}
    for template, label in templates:
        for text in _fill_all(template, lexicons):
            pairs.setdefault(text, label)
    items = _subsample(list(pairs.items()), cap, seed)
    return _as_mft_instances([t for t, _ in items], [y for _, y in items], capability)


def _as_mft_instances(texts, labels, capability, fixed_label=None) -> list[TestInstance]:
    slug = slugify(capability)
    out = []
    for i, text in enumerate(texts):
        label = fixed_label if labels is None else labels[i]
        case_id = f"{slug}:{i:05d}"
        out.append(TestInstance(f"{case_id}:00", case_id, capability, text, ORIGINAL, label))
    return out


# ---------------------------------------------------------------------------
# Perturbations
# ---------------------------------------------------------------------------

_TOKEN_SPAN_RE = re.compile(r"\S+")


def _first_token(text: str, accept: Callable[[str], bool]):
    for m in _TOKEN_SPAN_RE.finditer(text):
        if accept(m.group(0)):
            return m
    return None


def _swap_first(instance, is_slot, candidates_for, k, rng) -> list[str]:
    m = _first_token(instance.text, is_slot)
    if m is None:
        return []
    original = m.group(0)
    pool = [c for c in candidates_for(original) if c != original]
    if not pool:
        return []
    k = min(k, len(pool))
    chosen = rng.choice(len(pool), size=k, replace=False)
    head, tail = instance.text[: m.start()], instance.text[m.end() :]
    return [head + pool[i] + tail for i in chosen]


def perturb_change_names(instance, name_lexicon, replacement_names, k: int, rng) -> list[str]:
    """Replace the first lexicon name token with ``k`` distinct other names.

    Returns the perturbed texts; an empty list means the instance holds no
    name and the case should be skipped.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    names = set(name_lexicon)
    replacement_names = list(replacement_names)
    return _swap_first(instance, names.__contains__, lambda _: replacement_names, k, rng)


def perturb_change_neutral(instance, neutral_lexicon, k: int, rng) -> list[str]:
    """Swap the first neutral function word for ``k`` others from the lexicon."""
    if k < 1:
        raise InputError("k must be >= 1")
    lexicon = list(neutral_lexicon)
    words = set(lexicon)
    return _swap_first(instance, words.__contains__, lambda _: lexicon, k, rng)


def perturb_add_phrase(instance, phrase: str, separator: str = " ") -> str:
    return instance.text + separator + phrase


# ---------------------------------------------------------------------------
# Suite construction
# ---------------------------------------------------------------------------

# (name, test type, cases at scale 1, perturbations per case, DIR expectation, unvalidated)
CAPABILITY_TABLE = (
    ("Single Positive Words", MFT, 22, None, None, False),
    ("Single Negative Words", MFT, 14, None, None, False),
    ("Sentiment-laden Words in Context", MFT, 1350, None, None, False),
    ("Temporal Sentiment Change", MFT, 2152, None, None, False),
    ("Negation of Positive Sentences", MFT, 1350, None, None, False),
    ("Negation of Positive, neutral words in the middle", MFT, 500, None, None, False),
    ("Movie Genre Specific Sentiments", MFT, 736, None, None, False),
    ("Movie Sentiments", MFT, 58, None, None, False),
    ("Movie Industries Sentiments", MFT, 1200, None, None, False),
    ("Change Neutral Words", INV, 500, 7, None, False),
    ("Change Names", INV, 147, 10, None, False),
    ("Negative Names - Positive Instances", INV, 157, 10, None, False),
    ("Positive Names - Negative Instances", INV, 123, 10, None, False),
    ("Negative Names - Negative Instances", INV, 123, 10, None, False),
    ("Positive Names - Positive Instances", INV, 157, 10, None, False),
    ("Change Movie Industries", INV, 18, 13, None, False),
    ("Add Positive Phrases", DIR, 500, None, POSITIVE_UP, False),
    ("Add Negative Phrases", DIR, 500, None, NEGATIVE_UP, False),
    ("Add Negations", MFT, 500, None, None, True),
    ("Negation of Negative Sentences", MFT, 500, None, None, True),
)

DEFAULT_CAPABILITIES = tuple(row[0] for row in CAPABILITY_TABLE if not row[5])
UNVALIDATED_CAPABILITIES = tuple(row[0] for row in CAPABILITY_TABLE if row[5])
_TABLE = {row[0]: row for row in CAPABILITY_TABLE}


def capability_spec(name: str):
    try:
        return _TABLE[name]
    except KeyError:
        raise InputError(f"unknown capability {name!r}") from None


@dataclass
class SuiteConfig:
    scale: float = 1.0
    tau: float = 0.1
    enabled: list[str] | None = None
    include_unvalidated: bool = False
    sizes: dict = field(default_factory=dict)
    perturbations: dict = field(default_factory=dict)

    def capabilities(self) -> list[str]:
        names = list(self.enabled) if self.enabled is not None else list(DEFAULT_CAPABILITIES)
        if self.include_unvalidated:
            names += [n for n in UNVALIDATED_CAPABILITIES if n not in names]
        for n in names:
            capability_spec(n)
        return names

    def n_cases(self, name: str) -> int:
        if name in self.sizes:
            return int(self.sizes[name])
        base = capability_spec(name)[2]
        return max(1, int(math.floor(base * self.scale + 0.5)))

    def k(self, name: str) -> int | None:
        return self.perturbations.get(name, capability_spec(name)[3])


@dataclass
class Suite:
    capabilities: list[Capability]
    instances: list[TestInstance]
    skips: dict[str, dict] = field(default_factory=dict)
    seed: int = 0

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "capabilities": [asdict(c) for c in self.capabilities],
            "skips": self.skips,
        }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(t), sort_keys=True) + "\n" for t in self.instances)

    @classmethod
    def from_files(cls, manifest: dict, jsonl_text: str) -> "Suite":
        caps = [Capability(**c) for c in manifest["capabilities"]]
        insts = [TestInstance(**json.loads(ln)) for ln in jsonl_text.splitlines() if ln.strip()]
        return cls(caps, insts, manifest.get("skips", {}), manifest.get("seed", 0))

    def by_capability(self) -> dict[str, list[TestInstance]]:
        out: dict[str, list[TestInstance]] = {c.name: [] for c in self.capabilities}
        for inst in self.instances:
            out.setdefault(inst.capability, []).append(inst)
        return out


def _rng_for(seed: int, name: str):
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _mft_families(lex) -> dict[str, list[tuple[str, int]]]:
    genres = parse_genre_lexicon(lex["genre_sentiments"])
    genre_templates = []
    for g in sorted(genres):
        for label in (1, 0):
            slot = f"genre_{g}_{label}"
            genre_templates += [
                (f"{{det}} {g} {{movie_noun}} {{be}} {{{slot}}} .", label),
                (f"i found this {g} {{movie_noun}} {{{slot}}} .", label),
                (f"watching the {g} {{movie_noun}} was {{{slot}}} .", label),
            ]
    return {
        "Single Positive Words": [("{positive_words}", 1)],
        "Single Negative Words": [("{negative_words}", 0)],
        "Sentiment-laden Words in Context": [
            ("i {positive_verbs} that {movie_things} .", 1),
            ("i {negative_verbs} that {movie_things} .", 0),
            ("{det} {movie_things} {be} {positive_adjectives} .", 1),
            ("{det} {movie_things} {be} {negative_adjectives} .", 0),
        ],
        "Temporal Sentiment Change": [
            ("i used to {negative_verbs} this {movie_things} , but now i {positive_verbs} it .", 1),
            ("i used to {positive_verbs} this {movie_things} , but now i {negative_verbs} it .", 0),
            ("in the past i thought this {movie_things} was {negative_adjectives} , now i think it is {positive_adjectives} .", 1),
            ("in the past i thought this {movie_things} was {positive_adjectives} , now i think it is {negative_adjectives} .", 0),
        ],
        "Negation of Positive Sentences": [
            ("i do n't {positive_verbs} {det} {movie_things} .", 0),
            ("{det} {movie_things} {be} not {positive_adjectives} .", 0),
            ("i would never call {det} {movie_things} {positive_adjectives} .", 0),
        ],
        "Negation of Positive, neutral words in the middle": [
            ("i do n't think , {neutral_middles} , that this {movie_things} is {positive_adjectives} .", 0),
            ("i would not say , {neutral_middles} , that the {movie_things} was {positive_adjectives} .", 0),
        ],
        "Movie Genre Specific Sentiments": genre_templates,
        "Movie Sentiments": [
            ("the {movie_noun} {be} {positive_adjectives} .", 1),
            ("the {movie_noun} {be} {negative_adjectives} .", 0),
        ],
        "Movie Industries Sentiments": [
            ("i {positive_verbs} {movie_industries} {films} .", 1),
            ("i {negative_verbs} {movie_industries} {films} .", 0),
            ("{movie_industries} makes {positive_adjectives} {films} .", 1),
            ("{movie_industries} makes {negative_adjectives} {films} .", 0),
            ("{movie_industries} {films} are {positive_adjectives} .", 1),
            ("{movie_industries} {films} are {negative_adjectives} .", 0),
        ],
        "Negation of Negative Sentences": [
            ("i do n't {negative_verbs} {det} {movie_things} .", 1),
            ("{det} {movie_things} {be} not {negative_adjectives} .", 1),
        ],
    }


def _slot_lexicons(lex) -> dict[str, list[str]]:
    slots = {k: list(v) for k, v in lex.items() if k != "genre_sentiments"}
    slots.update(
        det=["the", "this", "that"],
        be=["is", "was"],
        movie_noun=["movie", "film", "flick"],
        films=["movies", "films"],
    )
    for g, by_label in parse_genre_lexicon(lex["genre_sentiments"]).items():
        for label, words in by_label.items():
            slots[f"genre_{g}_{label}"] = words
    return slots


_NEGATABLE = {"is": "is not", "was": "was not", "are": "are not", "were": "were not"}


def _add_negation(text: str) -> str | None:
    m = _first_token(text, _NEGATABLE.__contains__)
    if m is None:
        return None
    return text[: m.start()] + _NEGATABLE[m.group(0)] + text[m.end() :]


def build_suite(
    config: SuiteConfig,
    test_corpus: Sequence[LabeledInstance],
    name_lists: dict[str, Sequence[str]],
    lexicons: dict[str, Sequence[str]],
    seed: int = 0,
) -> Suite:
    """Materialize every enabled capability.

    ``name_lists`` needs ``positive`` and ``negative`` (mined polarizing
    names); ``lexicons`` is the bundle from :func:`seedstab.data.load_lexicons`.
    Perturbation capabilities draw their originals from ``test_corpus``.
    """
    names = config.capabilities()
    slots = _slot_lexicons(lexicons)
    families = _mft_families(lexicons)
    name_lex = list(lexicons.get("names", []))
    industries = list(lexicons.get("movie_industries", []))

    capabilities, instances, skips = [], [], {}
    for cap_name in names:
        _, test_type, _, _, direction, unvalidated = capability_spec(cap_name)
        n = config.n_cases(cap_name)
        k = config.k(cap_name)
        rng = _rng_for(seed, cap_name)

        if cap_name == "Add Negations":
            eligible = [x for x in test_corpus if _add_negation(x.text) is not None]
            chosen = _choose(eligible, n, rng)
            texts = [_add_negation(x.text) for x in chosen]
            cap_insts = _as_mft_instances(texts, [1 - x.label for x in chosen], cap_name)
            skips[cap_name] = {"ineligible_originals": len(test_corpus) - len(eligible)}
        elif test_type == MFT:
            cap_insts = expand_templates(families[cap_name], slots, n, int(rng.integers(2**31)), cap_name)
        else:
            cap_insts, skip = _perturbation_capability(
                cap_name, test_corpus, name_lists, lexicons, name_lex, industries, n, k, rng
            )
            skips[cap_name] = skip

        cases = {inst.case_id for inst in cap_insts}
        capabilities.append(
            Capability(cap_name, test_type, len(cases), len(cap_insts), direction, unvalidated)
        )
        instances.extend(cap_insts)
        if not cap_insts:
            skips.setdefault(cap_name, {})["empty"] = True
    return Suite(capabilities, instances, skips, seed)


def _choose(eligible: list, n: int, rng) -> list:
    if len(eligible) <= n:
        return list(eligible)
    keep = np.sort(rng.choice(len(eligible), size=n, replace=False))
    return [eligible[i] for i in keep]


def _require(cap_name, mapping, key):
    values = mapping.get(key)
    if not values:
        raise SuiteBuildError(cap_name, f"prerequisite {key!r} is missing or empty")
    return list(values)


def _perturbation_capability(cap_name, test_corpus, name_lists, lexicons, name_lex, industries, n, k, rng):
    if cap_name in ("Add Positive Phrases", "Add Negative Phrases"):
        key = "positive_phrases" if cap_name == "Add Positive Phrases" else "negative_phrases"
        phrases = _require(cap_name, lexicons, key)
        originals = _choose(list(test_corpus), n, rng)
        groups = [[perturb_add_phrase(x, p) for p in phrases] for x in originals]
        return _cases(cap_name, originals, groups), {"ineligible_originals": 0}

    if cap_name == "Change Neutral Words":
        lexicon = _require(cap_name, lexicons, "neutral_words")
        words = set(lexicon)
        eligible = [x for x in test_corpus if _first_token(x.text, words.__contains__)]
        originals = _choose(eligible, n, rng)
        groups = [perturb_change_neutral(x, lexicon, k, rng) for x in originals]
        return _cases(cap_name, originals, groups), {
            "ineligible_originals": len(test_corpus) - len(eligible)
        }

    if cap_name == "Change Movie Industries":
        _require(cap_name, lexicons, "movie_industries")
        pivot, others = industries[0], industries[1:]
        if not others:
            raise SuiteBuildError(cap_name, "movie industry lexicon needs entries besides the pivot")
        eligible = [x for x in test_corpus if _first_token(x.text, pivot.__eq__)]
        originals = _choose(eligible, n, rng)
        groups = [
            _swap_first(x, pivot.__eq__, lambda _: others, k, rng) for x in originals
        ]
        return _cases(cap_name, originals, groups), {
            "ineligible_originals": len(test_corpus) - len(eligible)
        }

    # name-based INV capabilities
    _require(cap_name, lexicons, "names")
    names = set(name_lex)
    if cap_name == "Change Names":
        label_filter = None
        replacements = name_lex
    else:
        source, target = cap_name.split(" - ")
        polarity = "negative" if source.startswith("Negative") else "positive"
        label_filter = 1 if target.startswith("Positive") else 0
        replacements = _require(cap_name, name_lists, polarity)
    eligible = [
        x
        for x in test_corpus
        if (label_filter is None or x.label == label_filter)
        and _first_token(x.text, names.__contains__)
    ]
    originals = _choose(eligible, n, rng)
    groups = [perturb_change_names(x, name_lex, replacements, k, rng) for x in originals]
    n_candidates = sum(1 for x in test_corpus if label_filter is None or x.label == label_filter)
    return _cases(cap_name, originals, groups), {
        "ineligible_originals": n_candidates - len(eligible)
    }


def _cases(cap_name, originals, groups) -> list[TestInstance]:
    slug = slugify(cap_name)
    out = []
    case_no = 0
    for orig, perturbed in zip(originals, groups):
        if not perturbed:
            continue
        case_id = f"{slug}:{case_no:05d}"
        out.append(TestInstance(f"{case_id}:00", case_id, cap_name, orig.text, ORIGINAL))
        for j, text in enumerate(perturbed, 1):
            out.append(TestInstance(f"{case_id}:{j:02d}", case_id, cap_name, text, PERTURBED))
        case_no += 1
    return out


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_model(
    predict: Callable[[list[str]], np.ndarray],
    instances: Sequence[TestInstance],
    capabilities: Sequence[Capability],
    tau: float = 0.1,
    seed=None,
    variant=None,
) -> tuple[list[EvalRecord], list[CaseResult]]:
    """Apply MFT / INV / DIR failure rules to one model's predictions.

    ``predict`` maps a list of texts to positive-class probabilities.
    A DIR move counts as ``up``/``down`` only when it exceeds ``tau``;
    smaller moves are ``within-tolerance`` and pass.
    """
    caps = {c.name: c for c in capabilities}
    conf = np.asarray(predict([i.text for i in instances]), dtype=np.float64)
    if conf.shape != (len(instances),):
        raise InputError("predict must return one confidence per instance")

    by_case: dict[str, list[int]] = {}
    for idx, inst in enumerate(instances):
        if inst.capability not in caps:
            raise InputError(f"instance {inst.instance_id} has unknown capability {inst.capability!r}")
        by_case.setdefault(inst.case_id, []).append(idx)

    records: list[EvalRecord | None] = [None] * len(instances)
    results = []
    for case_id, idxs in by_case.items():
        cap = caps[instances[idxs[0]].capability]
        failing = []
        if cap.test_type == MFT:
            for idx in idxs:
                inst = instances[idx]
                if inst.expected_label is None:
                    raise InputError(f"MFT instance {inst.instance_id} lacks an expected label")
                pred = int(conf[idx] > 0.5)
                failed = pred != inst.expected_label
                records[idx] = _record(seed, variant, inst, pred, conf[idx], {"mft_failed": failed})
                if failed:
                    failing.append(inst.instance_id)
        else:
            originals = [i for i in idxs if instances[i].role == ORIGINAL]
            if len(originals) != 1:
                raise InputError(f"case {case_id} must contain exactly one original, found {len(originals)}")
            o = originals[0]
            o_conf = conf[o]
            o_pred = int(o_conf > 0.5)
            records[o] = _record(seed, variant, instances[o], o_pred, o_conf, {})
            for idx in idxs:
                if idx == o:
                    continue
                inst = instances[idx]
                pred = int(conf[idx] > 0.5)
                if cap.test_type == INV:
                    flags = {"flipped": pred != o_pred}
                    failed = flags["flipped"]
                else:
                    direction = dir_direction(o_conf, conf[idx], tau)
                    failed = dir_failed(direction, cap.direction)
                    flags = {"dir_direction": direction, "dir_failed": failed}
                records[idx] = _record(seed, variant, inst, pred, conf[idx], flags)
                if failed:
                    failing.append(inst.instance_id)
        results.append(CaseResult(case_id, cap.name, bool(failing), failing))
    return records, results


def _record(seed, variant, inst, pred, confidence, flags):
    return EvalRecord(
        seed, variant, inst.instance_id, inst.case_id, inst.capability, pred, float(confidence), flags
    )


def dir_direction(before: float, after: float, tau: float) -> str:
    delta = after - before
    if delta > tau:
        return UP
    if delta < -tau:
        return DOWN
    return WITHIN


def dir_failed(direction: str, expected: str) -> bool:
    if expected == POSITIVE_UP:
        return direction == DOWN
    if expected == NEGATIVE_UP:
        return direction == UP
    raise InputError(f"unknown DIR expectation {expected!r}")


def case_results_from_records(records: Sequence[EvalRecord]) -> list[CaseResult]:
    """Rebuild case verdicts from stored records (case fails iff any instance fails)."""
    grouped: dict[str, list[EvalRecord]] = {}
    for r in records:
        grouped.setdefault(r.case_id, []).append(r)
    out = []
    for case_id, recs in grouped.items():
        failing = [r.instance_id for r in recs if instance_failed(r)]
        out.append(CaseResult(case_id, recs[0].capability, bool(failing), failing))
    return out


def instance_failed(record: EvalRecord) -> bool:
    f = record.flags
    return bool(f.get("mft_failed") or f.get("flipped") or f.get("dir_failed"))
