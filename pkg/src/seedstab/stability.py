"""Cross-seed stability statistics: error rates, overlap ratios, Fleiss' kappa."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .checklist import (
    DIR,
    DOWN,
    INV,
    MFT,
    UP,
    WITHIN,
    Capability,
    CaseResult,
    EvalRecord,
    case_results_from_records,
)
from .errors import InputError

CORRECT, INCORRECT = "correct", "incorrect"
FLIPPED, CONSISTENT = "flipped", "consistent"


@dataclass(frozen=True)
class FailureSet:
    seed: int
    variant: str
    capability: str
    ids: frozenset = frozenset()


def case_error_rate(case_results: Sequence[CaseResult]) -> float:
    if not case_results:
        raise InputError("error rate needs at least one case")
    return sum(1 for c in case_results if c.failed) / len(case_results)


def overlap_ratio(a, b) -> float | None:
    """Jaccard index of two failure sets; ``None`` when both are empty."""
    if isinstance(a, FailureSet) and isinstance(b, FailureSet):
        if a.capability != b.capability or a.variant != b.variant:
            raise InputError(
                f"cannot compare failures of ({a.variant}, {a.capability}) with ({b.variant}, {b.capability})"
            )
        a, b = a.ids, b.ids
    a, b = set(a), set(b)
    union = len(a | b)
    if union == 0:
        return None
    return len(a & b) / union


def distribution_summary(values: Sequence[float]) -> dict:
    vals = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return {"n": 0, "min": None, "q1": None, "median": None, "q3": None, "max": None}
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    return {
        "n": int(vals.size),
        "min": float(vals.min()),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "max": float(vals.max()),
    }


@dataclass
class PairwiseOverlap:
    seeds: list[int]
    matrix: list[list[float | None]]
    pairs: list[tuple[int, int, float | None]]
    summary: dict

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "matrix": self.matrix,
            "pairs": [{"seed_a": a, "seed_b": b, "overlap": v} for a, b, v in self.pairs],
            "summary": self.summary,
        }


def pairwise_overlap(failure_sets: Sequence[FailureSet]) -> PairwiseOverlap:
    """Overlap for every unordered seed pair plus a box-plot style summary.

    Undefined pairs (both sets empty) appear as ``None`` and are left out of
    the summary; their count is reported as ``n_undefined``.
    """
    if len(failure_sets) < 2:
        raise InputError("pairwise overlap needs at least two seeds")
    sets = sorted(failure_sets, key=lambda f: f.seed)
    seeds = [f.seed for f in sets]
    if len(set(seeds)) != len(seeds):
        raise InputError("duplicate seed in failure sets")
    n = len(sets)
    matrix: list[list[float | None]] = [[None] * n for _ in range(n)]
    pairs = []
    for i in range(n):
        matrix[i][i] = 1.0 if sets[i].ids else None
    for i, j in itertools.combinations(range(n), 2):
        v = overlap_ratio(sets[i], sets[j])
        matrix[i][j] = matrix[j][i] = v
        pairs.append((seeds[i], seeds[j], v))
    values = [v for _, _, v in pairs]
    summary = distribution_summary(values)
    summary["n_pairs"] = len(pairs)
    summary["n_undefined"] = sum(1 for v in values if v is None)
    return PairwiseOverlap(seeds, matrix, pairs, summary)


# ---------------------------------------------------------------------------
# Fleiss' kappa
# ---------------------------------------------------------------------------


@dataclass
class RatingMatrix:
    """``counts[i, j]`` = number of raters that put item ``i`` in category ``j``."""

    items: list
    categories: list
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2:
            raise InputError("rating counts must be a 2-D array")
        if self.counts.shape != (len(self.items), len(self.categories)):
            raise InputError("rating counts shape does not match items x categories")
        if len(self.categories) < 2:
            raise InputError("need at least two categories")
        if np.any(self.counts < 0) or not np.all(self.counts == np.round(self.counts)):
            raise InputError("rating counts must be non-negative integers")
        self.counts = self.counts.astype(np.int64)

    @classmethod
    def from_array(cls, counts) -> "RatingMatrix":
        counts = np.asarray(counts)
        if counts.ndim != 2:
            raise InputError("rating counts must be a 2-D array")
        return cls(list(range(counts.shape[0])), list(range(counts.shape[1])), counts)

    @property
    def n_raters(self) -> int:
        return int(self.counts[0].sum()) if len(self.items) else 0


def fleiss_kappa(m, degenerate: float | None = 1.0) -> float | None:
    """Fleiss' kappa for a constant-row-sum rating matrix.

    When every rating falls in a single category the chance agreement is 1
    and the ratio is 0/0; ``degenerate`` is returned in that case (pass
    ``None`` to get the raw, undefined value).
    """
    if not isinstance(m, RatingMatrix):
        m = RatingMatrix.from_array(m)
    counts = m.counts.astype(np.float64)
    n_items = counts.shape[0]
    if n_items == 0:
        raise InputError("rating matrix has no items")
    row_sums = counts.sum(axis=1)
    n = row_sums[0]
    if np.any(row_sums != n):
        raise InputError("every item must be rated by the same number of raters")
    if n < 2:
        raise InputError("need at least two raters per item")

    p_j = counts.sum(axis=0) / (n_items * n)
    p_i = ((counts * counts).sum(axis=1) - n) / (n * (n - 1))
    p_bar = p_i.mean()
    p_e = float((p_j * p_j).sum())
    if np.count_nonzero(p_j) <= 1:
        return degenerate if p_bar == 1.0 else None
    return float((p_bar - p_e) / (1.0 - p_e))


def _matrix_from_assignments(assignments: Mapping, categories: list) -> RatingMatrix:
    """``{item: [category per rater]}`` -> RatingMatrix in item insertion order."""
    col = {c: j for j, c in enumerate(categories)}
    items = list(assignments)
    counts = np.zeros((len(items), len(categories)), dtype=np.int64)
    for i, item in enumerate(items):
        for c in assignments[item]:
            counts[i, col[c]] += 1
    return RatingMatrix(items, list(categories), counts)


def build_dev_matrix(predictions: Mapping, dev_labels: Mapping, misclassified_only: bool = False) -> RatingMatrix:
    """Seeds as raters, dev instances as items, {correct, incorrect} as categories.

    ``predictions`` maps seed -> {instance_id: predicted label};
    ``dev_labels`` maps instance_id -> gold label. With
    ``misclassified_only`` the items are restricted to instances that at
    least one seed got wrong.
    """
    if len(predictions) < 2:
        raise InputError("need predictions from at least two seeds")
    assignments = {}
    for iid, gold in dev_labels.items():
        row = []
        for seed in sorted(predictions):
            try:
                pred = predictions[seed][iid]
            except KeyError:
                raise InputError(f"seed {seed} has no prediction for dev instance {iid!r}") from None
            row.append(CORRECT if pred == gold else INCORRECT)
        if misclassified_only and INCORRECT not in row:
            continue
        assignments[iid] = row
    return _matrix_from_assignments(assignments, [CORRECT, INCORRECT])


def _record_category(rec: EvalRecord, test_type: str):
    f = rec.flags
    if test_type == MFT:
        return INCORRECT if f["mft_failed"] else CORRECT
    if test_type == INV:
        return FLIPPED if f["flipped"] else CONSISTENT
    return f["dir_direction"]


def capability_categories(test_type: str, dir_categories: int = 3) -> list[str]:
    if test_type == MFT:
        return [CORRECT, INCORRECT]
    if test_type == INV:
        return [FLIPPED, CONSISTENT]
    return [UP, DOWN, WITHIN] if dir_categories == 3 else [UP, DOWN]


def build_capability_matrix(records: Sequence[EvalRecord], capability: Capability, dir_categories: int = 3) -> RatingMatrix:
    """Seeds as raters over the instances that carry a verdict.

    MFT: {correct, incorrect} over all instances. INV: {flipped,
    consistent} over perturbed instances. DIR: {up, down,
    within-tolerance} over perturbed instances; with ``dir_categories=2``
    within-tolerance moves are folded into the side that passes.
    """
    by_seed: dict = {}
    for r in records:
        if r.capability != capability.name:
            raise InputError(
                f"record {r.instance_id} belongs to {r.capability!r}, not {capability.name!r}"
            )
        if capability.test_type != MFT and not r.flags:
            continue  # originals carry no verdict
        by_seed.setdefault(r.seed, {})[r.instance_id] = r
    if len(by_seed) < 2:
        raise InputError(f"{capability.name}: need records from at least two seeds")
    seeds = sorted(by_seed)
    item_ids = sorted(by_seed[seeds[0]])
    for s in seeds[1:]:
        if sorted(by_seed[s]) != item_ids:
            raise InputError(f"{capability.name}: seed {s} does not cover the same instances")
    cats = capability_categories(capability.test_type, dir_categories)
    assignments = {}
    for iid in item_ids:
        row = []
        for s in seeds:
            c = _record_category(by_seed[s][iid], capability.test_type)
            if c == WITHIN and dir_categories == 2:
                c = UP if capability.direction == "positive-up" else DOWN
            row.append(c)
        assignments[iid] = row
    return _matrix_from_assignments(assignments, cats)


# ---------------------------------------------------------------------------
# Outliers and report composition
# ---------------------------------------------------------------------------


def flag_outlier_seeds(dev_accuracy: Mapping, iqr_factor: float = 3.0, min_gap: float = 0.01) -> list:
    """Seeds whose dev accuracy sits more than ``iqr_factor`` IQRs below the median.

    ``min_gap`` is an absolute floor on that distance so a near-zero IQR
    (common when seeds agree closely) does not flag ordinary noise.
    """
    if len(dev_accuracy) < 3:
        return []
    seeds = sorted(dev_accuracy)
    acc = np.array([dev_accuracy[s] for s in seeds], dtype=np.float64)
    q1, med, q3 = np.percentile(acc, [25, 50, 75])
    gap = max(iqr_factor * (q3 - q1), min_gap)
    return [s for s, a in zip(seeds, acc) if med - a > gap]


@dataclass
class VariantData:
    """Everything measured for one variant: keyed by seed."""

    records: dict  # seed -> list[EvalRecord]
    dev_predictions: dict  # seed -> {instance_id: pred}
    dev_accuracy: dict  # seed -> float


@dataclass
class AnalysisOptions:
    dir_categories: int = 3
    misclassified_only: bool = False
    iqr_factor: float = 3.0
    min_gap: float = 0.01


def _kappa_pair(m: RatingMatrix):
    return fleiss_kappa(m, degenerate=1.0), fleiss_kappa(m, degenerate=None)


def _diff(a, b):
    return None if a is None or b is None else b - a


def compose_report(
    capabilities: Sequence[Capability],
    variants: Mapping[str, VariantData],
    dev_labels: Mapping,
    seeds: Sequence[int],
    options: AnalysisOptions | None = None,
) -> dict:
    """Stability report over ``seeds`` for every variant in ``variants``.

    The returned dict is JSON-ready: per-capability error rates per seed,
    pairwise overlap matrices, kappa per variant with the SWA minus
    vanilla difference, DIR direction tallies, and dev-set kappa.
    """
    options = options or AnalysisOptions()
    seeds = sorted(seeds)
    names = sorted(variants)
    for v in names:
        missing = [s for s in seeds if s not in variants[v].records]
        if missing:
            raise InputError(f"variant {v!r} lacks seeds {missing}")
    notes = []

    dev = {"accuracy": {}, "kappa": {}, "kappa_raw": {}, "n_items": {}}
    for v in names:
        preds = {s: variants[v].dev_predictions[s] for s in seeds}
        m = build_dev_matrix(preds, dev_labels, options.misclassified_only)
        dev["accuracy"][v] = {str(s): variants[v].dev_accuracy[s] for s in seeds}
        dev["n_items"][v] = len(m.items)
        if len(m.items):
            dev["kappa"][v], dev["kappa_raw"][v] = _kappa_pair(m)
        else:
            dev["kappa"][v] = dev["kappa_raw"][v] = None
    if "vanilla" in names and "swa" in names:
        dev["difference"] = _diff(dev["kappa"]["vanilla"], dev["kappa"]["swa"])

    cap_reports, omitted = [], []
    for cap in capabilities:
        if cap.n_cases == 0:
            omitted.append({"capability": cap.name, "reason": "no cases (all originals skipped)"})
            notes.append(f"capability {cap.name!r} omitted: no cases")
            continue
        entry = {
            "capability": cap.name,
            "test_type": cap.test_type,
            "n_cases": cap.n_cases,
            "m_instances": cap.m_instances,
            "error_rates": {},
            "error_rate_summary": {},
            "overlap": {},
            "kappa": {},
            "kappa_raw": {},
        }
        if cap.test_type == DIR:
            entry["direction"] = cap.direction
            entry["dir_tallies"] = {}
        for v in names:
            rates, fsets, cap_recs = {}, [], []
            tallies = {}
            for s in seeds:
                recs = [r for r in variants[v].records[s] if r.capability == cap.name]
                cap_recs.extend(recs)
                cases = case_results_from_records(recs)
                rates[str(s)] = case_error_rate(cases)
                failing = frozenset(i for c in cases for i in c.failing_instance_ids)
                fsets.append(FailureSet(s, v, cap.name, failing))
                if cap.test_type == DIR:
                    t = {UP: 0, DOWN: 0, WITHIN: 0}
                    for r in recs:
                        if r.flags:
                            t[r.flags["dir_direction"]] += 1
                    tallies[str(s)] = t
            entry["error_rates"][v] = rates
            entry["error_rate_summary"][v] = distribution_summary(list(rates.values()))
            entry["overlap"][v] = pairwise_overlap(fsets).to_dict()
            m = build_capability_matrix(cap_recs, cap, options.dir_categories)
            entry["kappa"][v], entry["kappa_raw"][v] = _kappa_pair(m)
            if cap.test_type == DIR:
                entry["dir_tallies"][v] = tallies
        if "vanilla" in names and "swa" in names:
            entry["kappa"]["difference"] = _diff(entry["kappa"]["vanilla"], entry["kappa"]["swa"])
        cap_reports.append(entry)

    return {
        "seeds": seeds,
        "variants": names,
        "n_models": len(seeds) * len(names),
        "options": {
            "dir_categories": options.dir_categories,
            "misclassified_only": options.misclassified_only,
        },
        "dev": dev,
        "capabilities": cap_reports,
        "omitted_capabilities": omitted,
        "notes": notes,
    }
