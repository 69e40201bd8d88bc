"""prepare -> train -> eval -> report, driven by a :class:`RunConfig`.

Directory layout under ``out_dir``::

    config.yaml
    lexicons/<name>.txt
    data/{train,dev,test}.jsonl, vocab.json, name_polarity.json,
         names_positive.txt, names_negative.txt[, match_report.json]
    suite/instances.jsonl, suite/manifest.json
    models/weights_seed{S}_{variant}_epoch{E}.bin
    logs/train_seed{S}_{variant}.json, logs/train_summary.json
    eval/records_seed{S}_{variant}.jsonl, eval/dev_seed{S}_{variant}.jsonl
    report/...
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import checklist, data, stability
from .checklist import EvalRecord, Suite
from .config import RunConfig
from .errors import (
    AllSeedsFailedError,
    DataError,
    IncompleteEvaluationError,
    InputError,
    TrainingError,
)
from .swa import select_swa_lr, train_swa
from .textmodel import (
    LrSchedule,
    Vocab,
    atomic_write_bytes,
    build_vocab,
    encode_set,
    load_weights,
    predict_proba,
    save_weights,
    train,
)

log = logging.getLogger(__name__)

_TEMPLATE_LEXICONS = (
    "Sentiment-laden Words in Context",
    "Temporal Sentiment Change",
    "Negation of Positive Sentences",
    "Movie Sentiments",
    "Movie Industries Sentiments",
)
LEXICON_USERS = {
    "names": ("Change Names", "Negative Names - Positive Instances", "Positive Names - Negative Instances",
              "Negative Names - Negative Instances", "Positive Names - Positive Instances"),
    "movie_industries": ("Movie Industries Sentiments", "Change Movie Industries"),
    "neutral_words": ("Change Neutral Words",),
    "positive_phrases": ("Add Positive Phrases",),
    "negative_phrases": ("Add Negative Phrases",),
    "positive_words": ("Single Positive Words",),
    "negative_words": ("Single Negative Words",),
    "positive_verbs": _TEMPLATE_LEXICONS,
    "negative_verbs": _TEMPLATE_LEXICONS,
    "positive_adjectives": _TEMPLATE_LEXICONS,
    "negative_adjectives": _TEMPLATE_LEXICONS,
    "movie_things": _TEMPLATE_LEXICONS,
    "neutral_middles": ("Negation of Positive, neutral words in the middle",),
    "genre_sentiments": ("Movie Genre Specific Sentiments",),
}


def write_text(path: Path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, obj):
    write_text(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _read(path: Path) -> str:
    if not path.exists():
        raise DataError("missing; run the earlier pipeline stage first", path=path)
    return path.read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def _resolve_lexicons(cfg: RunConfig) -> dict[str, list[str]]:
    out = {}
    for name in data.LEXICON_NAMES:
        path = Path(cfg.lexicons[name]) if name in cfg.lexicons else data.default_lexicon_path(name)
        if not path.exists():
            users = ", ".join(LEXICON_USERS.get(name, ())) or "synthetic corpus"
            raise DataError(f"lexicon {name!r} not found (needed by: {users})", path=path)
        out[name] = data.read_lexicon(path)
    return out


def _load_corpus(cfg: RunConfig, lex, out: Path):
    c = cfg.corpus
    if c.source == "synthetic":
        corpus = data.gen_synthetic_corpus(c.seed, c.n_train, c.n_dev, c.n_test, lex, c.hard_fraction)
        return corpus.train, corpus.dev, corpus.test
    train = data.load_tsv(c.train_tsv)
    dev = data.load_tsv(c.dev_tsv)
    if c.test_tsv:
        test = data.load_tsv(c.test_tsv)
    else:
        if not (c.sst_dictionary and c.sst_sentiment_labels):
            raise DataError("sst_test_sentences needs sst_dictionary and sst_sentiment_labels")
        dictionary = data.PhraseDictionary.load(c.sst_dictionary, c.sst_sentiment_labels)
        match = data.match_test_labels(data.load_test_sentences(c.sst_test_sentences), dictionary)
        write_json(out / "data" / "match_report.json", match.report())
        test = match.labeled
    return train, dev, test


def prepare(cfg: RunConfig) -> dict:
    """Materialize corpus, lexicons, mined names and the behavioral suite.

    Every file is a pure function of the config, so re-running rewrites
    byte-identical outputs.
    """
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "config.yaml", cfg.dump())

    lex = _resolve_lexicons(cfg)
    for name, entries in lex.items():
        write_text(out / "lexicons" / f"{name}.txt", "".join(e + "\n" for e in entries))

    train_set, dev_set, test_set = _load_corpus(cfg, lex, out)
    if not train_set:
        raise DataError("training corpus is empty")
    ddir = out / "data"
    ddir.mkdir(parents=True, exist_ok=True)
    for split, items in (("train", train_set), ("dev", dev_set), ("test", test_set)):
        data.write_jsonl(ddir / f"{split}.jsonl", items)

    vocab = build_vocab(train_set, cfg.min_freq)
    write_text(ddir / "vocab.json", vocab.to_json() + "\n")

    positive, negative, polarity = data.extract_name_polarity(
        train_set, lex["names"], cfg.names.min_count, cfg.names.exclusions
    )
    write_text(ddir / "names_positive.txt", "".join(n + "\n" for n in positive))
    write_text(ddir / "names_negative.txt", "".join(n + "\n" for n in negative))
    write_json(ddir / "name_polarity.json", [dataclasses.asdict(p) for p in polarity])

    suite = checklist.build_suite(
        cfg.suite, test_set, {"positive": positive, "negative": negative}, lex, seed=cfg.suite_seed
    )
    write_text(out / "suite" / "instances.jsonl", suite.to_jsonl())
    write_json(out / "suite" / "manifest.json", suite.manifest())
    log.info("prepared %d capabilities, %d instances", len(suite.capabilities), len(suite.instances))
    return {
        "capabilities": [c.name for c in suite.capabilities],
        "n_instances": len(suite.instances),
        "n_train": len(train_set),
        "n_dev": len(dev_set),
        "n_test": len(test_set),
        "positive_names": len(positive),
        "negative_names": len(negative),
    }


def load_suite(out: Path) -> Suite:
    manifest = json.loads(_read(out / "suite" / "manifest.json"))
    return Suite.from_files(manifest, _read(out / "suite" / "instances.jsonl"))


def _load_split(out: Path, split: str):
    path = out / "data" / f"{split}.jsonl"
    _read(path)
    return data.read_jsonl(path)


def _load_vocab(out: Path) -> Vocab:
    return Vocab.from_json(_read(out / "data" / "vocab.json"))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def weights_path(out: Path, seed: int, variant: str, epoch: int) -> Path:
    return out / "models" / f"weights_seed{seed}_{variant}_epoch{epoch}.bin"


def _digest(weights) -> str:
    return hashlib.sha256(weights.flat.astype("<f8").tobytes()).hexdigest()


def _train_seed(cfg: RunConfig, seed: int) -> dict:
    """Train every configured variant for one seed; failures stay local."""
    out = cfg.out_path
    vocab = _load_vocab(out)
    train_items = _load_split(out, "train")
    dev_items = _load_split(out, "dev")
    tr = encode_set(train_items, vocab)
    dv = encode_set(dev_items, vocab)
    tcfg = dataclasses.replace(cfg.train, seed=seed).resolved(len(tr))
    header = {"vocab_hash": vocab.digest(), "config_hash": tcfg.digest(), "seed": seed}
    epochs = tcfg.epochs
    summary = {"seed": seed, "variants": {}, "failures": []}

    for variant in cfg.variants:
        try:
            if variant == "vanilla":
                run = train(tcfg, LrSchedule.linear(tcfg), tr, dv, len(vocab), seed=seed)
                weights, final_acc = run.weights, run.dev_accuracy[-1]
                extra = {}
            else:
                lrs = list(cfg.swa.candidate_lrs) if cfg.select_swa_lr else [cfg.swa.constant_lr]
                results = {lr: train_swa(tcfg, cfg.swa, tr, dv, len(vocab), seed=seed, constant_lr=lr) for lr in lrs}
                chosen = select_swa_lr({lr: r.dev_accuracy for lr, r in results.items()})
                res = results[chosen]
                run, weights, final_acc = res.run, res.weights, res.dev_accuracy
                extra = {
                    "cutoff_epoch": cfg.swa.cutoff_epoch,
                    "constant_lr": chosen,
                    "candidate_dev_accuracy": {repr(lr): r.dev_accuracy for lr, r in results.items()},
                    "n_averaged": res.n_averaged,
                    "averaged_snapshot_hashes": [_digest(s) for s in res.snapshots],
                }
        except TrainingError as exc:
            log.warning("seed %s variant %s failed: %s", seed, variant, exc)
            failure = {"seed": seed, "variant": variant, "error": str(exc), "epoch": exc.epoch, "step": exc.step}
            write_json(out / "logs" / f"train_seed{seed}_{variant}.json", {"failed": True, **failure})
            summary["failures"].append(failure)
            continue

        save_weights(weights_path(out, seed, variant, epochs), weights, variant=variant, epoch=epochs, **header)
        if cfg.save_snapshots:
            for e, snap in enumerate(run.snapshots, 1):
                save_weights(
                    out / "models" / "snapshots" / weights_path(out, seed, variant, e).name,
                    snap, variant=f"{variant}-raw", epoch=e, **header,
                )
        log_doc = {
            "failed": False,
            "seed": seed,
            "variant": variant,
            "epochs": epochs,
            "total_steps": tcfg.total_steps,
            "warmup_steps": tcfg.warmup_steps,
            "epoch_dev_accuracy": run.dev_accuracy,
            "epoch_loss": run.epoch_loss,
            "final_dev_accuracy": final_acc,
            "lr_trace": run.lr_trace,
            "snapshot_hashes": [_digest(s) for s in run.snapshots],
            "weights_hash": _digest(weights),
            **extra,
        }
        write_json(out / "logs" / f"train_seed{seed}_{variant}.json", log_doc)
        summary["variants"][variant] = {"dev_accuracy": final_acc, **({"constant_lr": extra["constant_lr"]} if extra else {})}
    return summary


def train_all(cfg: RunConfig) -> dict:
    out = cfg.out_path
    _load_vocab(out)
    seeds = list(cfg.seeds)
    if cfg.parallelism > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
            summaries = list(pool.map(_train_seed, [cfg] * len(seeds), seeds))
    else:
        summaries = [_train_seed(cfg, s) for s in seeds]
    summaries.sort(key=lambda s: s["seed"])
    doc = {"seeds": summaries, "failures": [f for s in summaries for f in s["failures"]]}
    write_json(out / "logs" / "train_summary.json", doc)
    if all(not s["variants"] for s in summaries):
        raise AllSeedsFailedError("training failed for every seed")
    return doc


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _failed_pairs(out: Path) -> set:
    path = out / "logs" / "train_summary.json"
    if not path.exists():
        return set()
    doc = json.loads(path.read_text(encoding="utf-8"))
    return {(f["seed"], f["variant"]) for f in doc.get("failures", [])}


def _records_jsonl(records) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def evaluate_all(cfg: RunConfig) -> dict:
    """Score every trained model on the dev set and the behavioral suite."""
    out = cfg.out_path
    vocab = _load_vocab(out)
    suite = load_suite(out)
    dev_items = _load_split(out, "dev")
    dev_enc = encode_set(dev_items, vocab)
    suite_texts = [i.text for i in suite.instances]
    suite_enc = encode_set(suite_texts, vocab, with_labels=False) if suite_texts else None
    failed = _failed_pairs(out)

    written, skipped = [], []
    for seed in cfg.seeds:
        for variant in cfg.variants:
            if (seed, variant) in failed:
                skipped.append({"seed": seed, "variant": variant, "reason": "training failed"})
                continue
            path = weights_path(out, seed, variant, cfg.train.epochs)
            if not path.exists():
                raise DataError(f"no trained model for (seed={seed}, variant={variant})", path=path)
            weights, _ = load_weights(path)
            suite_conf = predict_proba(weights, suite_enc) if suite_enc is not None else []

            def predict(texts, _conf=suite_conf):
                if len(texts) != len(_conf):
                    raise InputError("suite predictions are precomputed for the full suite only")
                return _conf

            records, _ = checklist.evaluate_model(
                predict, suite.instances, suite.capabilities, cfg.suite.tau, seed=seed, variant=variant
            )
            dev_conf = predict_proba(weights, dev_enc)
            dev_records = []
            for inst, c in zip(dev_items, dev_conf):
                pred = int(c > 0.5)
                dev_records.append(
                    EvalRecord(seed, variant, inst.id, inst.id, "dev", pred, float(c),
                               {"label": inst.label, "incorrect": pred != inst.label})
                )
            write_text(out / "eval" / f"records_seed{seed}_{variant}.jsonl", _records_jsonl(records))
            write_text(out / "eval" / f"dev_seed{seed}_{variant}.jsonl", _records_jsonl(dev_records))
            written.append({"seed": seed, "variant": variant, "n_records": len(records), "n_dev": len(dev_records)})
    write_json(out / "eval" / "eval_summary.json", {"written": written, "skipped": skipped})
    return {"written": written, "skipped": skipped}


def _read_records(path: Path) -> list[EvalRecord]:
    return [EvalRecord.from_dict(json.loads(ln)) for ln in path.read_text(encoding="utf-8").splitlines() if ln]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v: .6f}"


def summary_text(report: dict) -> str:
    lines = [f"seeds: {report['seeds']}  models: {report['n_models']}", ""]
    dev = report["dev"]
    lines.append("Dev-set Fleiss' kappa (agreement on misclassifications)")
    lines.append(f"{'':<52}{'Vanilla':>12}{'SWA':>12}{'Difference':>12}")
    lines.append(
        f"{'dev':<52}{_fmt(dev['kappa'].get('vanilla')):>12}{_fmt(dev['kappa'].get('swa')):>12}"
        f"{_fmt(dev.get('difference')):>12}"
    )
    lines.append("")
    lines.append("Fleiss' kappa per capability")
    lines.append(f"{'capability':<52}{'Vanilla':>12}{'SWA':>12}{'Difference':>12}")
    for test_type in ("MFT", "INV", "DIR"):
        for cap in report["capabilities"]:
            if cap["test_type"] != test_type:
                continue
            k = cap["kappa"]
            lines.append(
                f"{cap['capability'][:51]:<52}{_fmt(k.get('vanilla')):>12}{_fmt(k.get('swa')):>12}"
                f"{_fmt(k.get('difference')):>12}"
            )
    lines.append("")
    lines.append("Mean case-level error rate per capability")
    lines.append(f"{'capability':<52}{'Vanilla':>12}{'SWA':>12}")
    for cap in report["capabilities"]:
        means = []
        for v in ("vanilla", "swa"):
            rates = cap["error_rates"].get(v)
            means.append(None if not rates else sum(rates.values()) / len(rates))
        lines.append(f"{cap['capability'][:51]:<52}{_fmt(means[0]):>12}{_fmt(means[1]):>12}")
    for note in report["notes"]:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, dest: Path):
    dest.mkdir(parents=True, exist_ok=True)
    write_json(dest / "report.json", report)
    err_rows, pair_rows, kappa_rows = [], [], []
    for cap in report["capabilities"]:
        name, tt = cap["capability"], cap["test_type"]
        for v, rates in cap["error_rates"].items():
            for seed, rate in rates.items():
                err_rows.append([name, tt, v, int(seed), rate, cap["n_cases"]])
        for v, ov in cap["overlap"].items():
            for p in ov["pairs"]:
                pair_rows.append([name, tt, v, p["seed_a"], p["seed_b"], p["overlap"]])
        k, kr = cap["kappa"], cap["kappa_raw"]
        kappa_rows.append([
            "capability", name, tt, k.get("vanilla"), k.get("swa"), k.get("difference"),
            kr.get("vanilla"), kr.get("swa"),
        ])
    dev = report["dev"]
    kappa_rows.insert(0, [
        "dev", "dev", "", dev["kappa"].get("vanilla"), dev["kappa"].get("swa"), dev.get("difference"),
        dev["kappa_raw"].get("vanilla"), dev["kappa_raw"].get("swa"),
    ])
    write_text(dest / "error_rates.csv", _csv(err_rows, ["capability", "test_type", "variant", "seed", "error_rate", "n_cases"]))
    write_text(dest / "overlap_pairs.csv", _csv(pair_rows, ["capability", "test_type", "variant", "seed_a", "seed_b", "overlap"]))
    write_text(dest / "kappa.csv", _csv(kappa_rows, [
        "scope", "name", "test_type", "vanilla", "swa", "difference", "vanilla_raw", "swa_raw",
    ]))
    write_text(dest / "summary.txt", summary_text(report))


def report(cfg: RunConfig) -> dict:
    """Compose the stability report(s); returns the index document."""
    out = cfg.out_path
    suite = load_suite(out)
    dev_labels = {x.id: x.label for x in _load_split(out, "dev")}
    failed = _failed_pairs(out)
    failed_seeds = {s for s, _ in failed}
    seeds = [s for s in cfg.seeds if s not in failed_seeds]

    missing = []
    variants = {}
    for v in cfg.variants:
        recs, dev_preds, dev_acc = {}, {}, {}
        for s in seeds:
            rp = out / "eval" / f"records_seed{s}_{v}.jsonl"
            dp = out / "eval" / f"dev_seed{s}_{v}.jsonl"
            if not rp.exists() or not dp.exists():
                missing.append((s, v))
                continue
            recs[s] = _read_records(rp)
            dev = _read_records(dp)
            dev_preds[s] = {r.instance_id: r.pred for r in dev}
            dev_acc[s] = sum(1 for r in dev if not r.flags["incorrect"]) / len(dev) if dev else float("nan")
        variants[v] = stability.VariantData(recs, dev_preds, dev_acc)
    if missing:
        raise IncompleteEvaluationError(missing)
    if len(seeds) < 2:
        raise InputError("stability analysis needs at least two successfully trained seeds")

    a = cfg.analysis
    options = stability.AnalysisOptions(a.dir_categories, a.misclassified_only, a.outlier_iqr_factor, a.outlier_min_gap)
    outliers = sorted({
        s for v in variants.values() for s in stability.flag_outlier_seeds(v.dev_accuracy, a.outlier_iqr_factor, a.outlier_min_gap)
    })
    rdir = out / "report"
    index = {
        "outlier_seeds": outliers,
        "failed_seeds": sorted(failed_seeds),
        "reports": {},
        "notes": [],
    }
    full = stability.compose_report(suite.capabilities, variants, dev_labels, seeds, options)
    full["outlier_seeds"] = outliers
    full["excluded_seeds"] = []
    if failed_seeds:
        full["notes"].append(f"seeds {sorted(failed_seeds)} excluded: training failed")
    if outliers:
        kept = [s for s in seeds if s not in outliers]
        write_report(full, rdir / "with_outliers")
        index["reports"]["with_outliers"] = "with_outliers/report.json"
        if len(kept) >= 2:
            trimmed = stability.compose_report(suite.capabilities, variants, dev_labels, kept, options)
            trimmed["outlier_seeds"] = outliers
            trimmed["excluded_seeds"] = outliers
            trimmed["notes"].append(f"outlier seeds {outliers} excluded (dev accuracy far below the seed median)")
            write_report(trimmed, rdir / "without_outliers")
            index["reports"]["without_outliers"] = "without_outliers/report.json"
        else:
            index["notes"].append("too few seeds remain after excluding outliers; only the full report was written")
        index["notes"].append(f"outlier seeds flagged: {outliers}")
    else:
        full["notes"].append("no outlier seed flagged; single report")
        write_report(full, rdir)
        index["reports"]["all_seeds"] = "report.json"
        index["notes"].append("no outlier seed flagged")
    write_json(rdir / "index.json", index)
    return index


def run_all(cfg: RunConfig) -> dict:
    return {
        "prepare": prepare(cfg),
        "train": train_all(cfg),
        "eval": evaluate_all(cfg),
        "report": report(cfg),
    }
