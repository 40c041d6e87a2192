"""Pipeline orchestration: configuration, staged execution with content
digests, resumability, and the seed-stability sweep.

Every stage reads its inputs from files and writes its outputs to files, so a
run can resume from any completed stage by digest comparison, and reruns with
the same config are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from . import __version__
from .ablation import (
    DEFAULT_SUPPORT_FLOOR, AblationSlice, LexiconEntry, ablate_many, load_lexicon, rank,
    write_ablation_table,
)
from .corpus import (
    DEFAULT_CUTOFF, DEFAULT_SPLIT_RATIOS, Corpus, LabelRecord, balance, ingest, partition,
    read_assignments, read_labels, split, write_assignments, write_corpus, write_labels,
)
from .errors import ConfigError, DataError
from .external import ClientSettings, ScorerClient
from .family import FitSettings, FittedModel, fit_content, fit_null, fit_weighted
from .regress import RegressionSpec, build_table, category_effects, fit_ols, halfyear_effects
from .vinfo import estimate, make_record, read_records, write_records

logger = logging.getLogger(__name__)

STAGE_ORDER_DEFAULT = ("balance", "split")
PVI_SPLITS = ("test", "validation")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _require_keys(doc: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys in {where}: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise ConfigError(f"missing config keys in {where}: {sorted(missing)}")


@dataclass
class PipelineConfig:
    corpus_path: Path
    corpus_format: str
    label_path: Path | None
    label_endpoint: str | None
    token_pair: tuple[str, str]
    prompt_id: str
    cutoff: date
    scheme: str
    balance_seed: int
    split_seed: int
    fit_seed: int
    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
    stage_order: tuple[str, str] = STAGE_ORDER_DEFAULT
    text_fields: tuple[str, ...] = ("title", "description")
    fit: FitSettings = field(default_factory=FitSettings)
    class_weights: tuple[float, float] | None = None
    pvi_split: str = "test"
    regressions: list[RegressionSpec] = field(default_factory=list)
    histogram_probs: tuple[float, ...] = tuple(i / 10 for i in range(1, 10))
    ablation_lexicon: Path | None = None
    ablation_enabled: bool = False
    ablation_floor: int = DEFAULT_SUPPORT_FLOOR
    ablation_top_k: int = 20
    output_dir: Path | None = None
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def seeds(self) -> dict[str, int]:
        return {"balance": self.balance_seed, "split": self.split_seed, "fit": self.fit_seed}

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
        ).hexdigest()


_TOP_KEYS = {
    "corpus", "labels", "token_pair", "prompt_id", "cutoff", "scheme", "seeds",
    "split_ratios", "stage_order", "text_fields", "fit", "pvi_split", "regressions",
    "histogram_probs", "ablation", "output_dir",
}
_FIT_KEYS = {"max_epochs", "learning_rate", "l2", "patience", "tol_bits",
             "min_token_freq", "class_weights"}
_REG_KEYS = {"name", "after", "halfyear", "controls", "category_after", "se_type",
             "raw_review_counts", "reference_category"}


def parse_config(doc: dict, base_dir: Path | None = None) -> PipelineConfig:
    """Validate a configuration document; unknown keys anywhere are fatal."""
    base = base_dir or Path(".")
    _require_keys(doc, _TOP_KEYS, {"corpus", "labels", "seeds"}, "config")

    corpus_doc = doc["corpus"]
    _require_keys(corpus_doc, {"path", "format"}, {"path"}, "config.corpus")
    corpus_path = (base / corpus_doc["path"]).resolve()
    if not corpus_path.is_file():
        raise ConfigError(f"corpus path does not exist: {corpus_path}")

    labels_doc = doc["labels"]
    _require_keys(labels_doc, {"path", "endpoint"}, set(), "config.labels")
    label_path = None
    label_endpoint = labels_doc.get("endpoint")
    if "path" in labels_doc:
        label_path = (base / labels_doc["path"]).resolve()
        if not label_path.is_file():
            raise ConfigError(f"label path does not exist: {label_path}")
    if (label_path is None) == (label_endpoint is None):
        raise ConfigError("config.labels needs exactly one of 'path' or 'endpoint'")

    seeds_doc = doc["seeds"]
    _require_keys(seeds_doc, {"balance", "split", "fit"}, {"balance", "split", "fit"}, "config.seeds")
    for key, value in seeds_doc.items():
        if not isinstance(value, int):
            raise ConfigError(f"config.seeds.{key} must be an explicit integer, got {value!r}")

    token_pair = tuple(doc.get("token_pair", ("SELECT", "PASS")))
    if len(token_pair) != 2 or token_pair[0] == token_pair[1]:
        raise ConfigError(f"token_pair must be two distinct tokens, got {token_pair}")

    scheme = doc.get("scheme", "binary")
    if scheme not in ("binary", "halfyear"):
        raise ConfigError(f"unknown scheme {scheme!r}")

    try:
        cutoff = date.fromisoformat(doc.get("cutoff", DEFAULT_CUTOFF.isoformat()))
    except ValueError as exc:
        raise ConfigError(f"bad cutoff date: {doc.get('cutoff')!r}") from exc

    stage_order = tuple(doc.get("stage_order", STAGE_ORDER_DEFAULT))
    if sorted(stage_order) != ["balance", "split"]:
        raise ConfigError(f"stage_order must list 'balance' and 'split', got {stage_order}")

    pvi_split = doc.get("pvi_split", "test")
    if pvi_split not in PVI_SPLITS:
        raise ConfigError(f"pvi_split must be one of {PVI_SPLITS}, got {pvi_split!r}")
    if pvi_split != "test":
        logger.warning("pvi_split=%r: diagnostics mode, estimates are not held-out-test values",
                       pvi_split)

    fit_doc = dict(doc.get("fit", {}))
    _require_keys(fit_doc, _FIT_KEYS, set(), "config.fit")
    class_weights = fit_doc.pop("class_weights", None)
    if class_weights is not None:
        class_weights = (float(class_weights[0]), float(class_weights[1]))
    fit_settings = FitSettings(**fit_doc)
    fit_settings.validate()

    regressions: list[RegressionSpec] = []
    for i, reg_doc in enumerate(doc.get("regressions", [])):
        _require_keys(reg_doc, _REG_KEYS, {"name"}, f"config.regressions[{i}]")
        spec = RegressionSpec(
            name=reg_doc["name"],
            after=reg_doc.get("after", not reg_doc.get("halfyear", False)),
            halfyear=reg_doc.get("halfyear", False),
            controls=tuple(reg_doc.get("controls", ())),
            category_after=reg_doc.get("category_after", False),
            se_type=reg_doc.get("se_type", "classical"),
            raw_review_counts=reg_doc.get("raw_review_counts", False),
            reference_category=reg_doc.get("reference_category"),
        )
        spec.validate()
        regressions.append(spec)
    if not regressions:
        regressions.append(RegressionSpec(name="baseline"))
        if scheme == "halfyear":
            regressions.append(RegressionSpec(name="halfyear", after=False, halfyear=True))
    names = [r.name for r in regressions]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate regression names: {names}")

    ablation_doc = doc.get("ablation")
    ablation_enabled = ablation_doc is not None
    ablation_lexicon = None
    ablation_floor = DEFAULT_SUPPORT_FLOOR
    ablation_top_k = 20
    if ablation_enabled:
        _require_keys(ablation_doc, {"lexicon", "min_support", "top_k"}, set(), "config.ablation")
        if ablation_doc.get("lexicon"):
            ablation_lexicon = (base / ablation_doc["lexicon"]).resolve()
            if not ablation_lexicon.is_file():
                raise ConfigError(f"ablation lexicon does not exist: {ablation_lexicon}")
        ablation_floor = int(ablation_doc.get("min_support", DEFAULT_SUPPORT_FLOOR))
        ablation_top_k = int(ablation_doc.get("top_k", 20))

    output_dir = doc.get("output_dir")
    return PipelineConfig(
        corpus_path=corpus_path,
        corpus_format=corpus_doc.get("format", "jsonl"),
        label_path=label_path,
        label_endpoint=label_endpoint,
        token_pair=token_pair,  # type: ignore[arg-type]
        prompt_id=doc.get("prompt_id", "V4"),
        cutoff=cutoff,
        scheme=scheme,
        balance_seed=seeds_doc["balance"],
        split_seed=seeds_doc["split"],
        fit_seed=seeds_doc["fit"],
        split_ratios=tuple(doc.get("split_ratios", DEFAULT_SPLIT_RATIOS)),  # type: ignore[arg-type]
        stage_order=stage_order,  # type: ignore[arg-type]
        text_fields=tuple(doc.get("text_fields", ("title", "description"))),
        fit=fit_settings,
        class_weights=class_weights,
        pvi_split=pvi_split,
        regressions=regressions,
        histogram_probs=tuple(doc.get("histogram_probs", tuple(i / 10 for i in range(1, 10)))),
        ablation_lexicon=ablation_lexicon,
        ablation_enabled=ablation_enabled,
        ablation_floor=ablation_floor,
        ablation_top_k=ablation_top_k,
        output_dir=(base / output_dir).resolve() if output_dir else None,
        base_dir=base,
        raw=doc,
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return parse_config(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Stage runner with digests
# ---------------------------------------------------------------------------

def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


STAGES = ("ingest", "labels", "partition", "balance", "split", "fit", "pvi",
          "regress", "ablate", "report")


class PipelineRun:
    """Owns one output directory and executes the stages in order."""

    def __init__(self, config: PipelineConfig, out_dir: str | Path,
                 resume: bool = False, threads: int = 1):
        self.config = config
        self.out = Path(out_dir)
        self.resume = resume
        self.threads = max(1, threads)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "tables").mkdir(exist_ok=True)
        (self.out / "figures").mkdir(exist_ok=True)
        (self.out / "models").mkdir(exist_ok=True)
        self.manifest_path = self.out / "manifest.json"
        self.manifest = self._load_manifest()

    # -- manifest -------------------------------------------------------------

    def _load_manifest(self) -> dict:
        if self.resume and self.manifest_path.is_file():
            manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
            if manifest.get("config_hash") != self.config.config_hash():
                logger.warning("config changed since previous run; ignoring old manifest")
                return self._fresh_manifest()
            return manifest
        return self._fresh_manifest()

    def _fresh_manifest(self) -> dict:
        return {
            "artifact_version": __version__,
            "config_hash": self.config.config_hash(),
            "seeds": self.config.seeds,
            "stages": {},
        }

    def _write_manifest(self) -> None:
        self.manifest_path.write_text(
            json.dumps(self.manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )

    def _stage_current(self, name: str, inputs: dict[str, Path]) -> bool:
        entry = self.manifest["stages"].get(name)
        if entry is None:
            return False
        recorded_inputs = entry.get("inputs", {})
        current = {key: file_digest(p) for key, p in inputs.items() if p.is_file()}
        if set(current) != set(recorded_inputs) or any(
            current[k] != recorded_inputs[k] for k in current
        ):
            return False
        for rel, digest in entry.get("outputs", {}).items():
            path = self.out / rel
            if not path.is_file() or file_digest(path) != digest:
                return False
        return True

    def _record_stage(self, name: str, inputs: dict[str, Path], outputs: list[Path]) -> None:
        self.manifest["stages"][name] = {
            "inputs": {key: file_digest(p) for key, p in inputs.items() if p.is_file()},
            "outputs": {str(p.relative_to(self.out)): file_digest(p) for p in outputs},
        }
        self._write_manifest()

    def _run_stage(self, name: str, inputs: dict[str, Path], fn) -> None:
        if self.resume and self._stage_current(name, inputs):
            logger.info("stage %-9s up to date, skipped", name)
            return
        logger.info("stage %-9s running", name)
        outputs = fn()
        self._record_stage(name, inputs, outputs)

    # -- stage paths ----------------------------------------------------------

    @property
    def corpus_clean(self) -> Path:
        return self.out / "corpus_clean.jsonl"

    @property
    def labels_clean(self) -> Path:
        return self.out / "labels_clean.jsonl"

    @property
    def periods_csv(self) -> Path:
        return self.out / "periods.csv"

    @property
    def balanced_csv(self) -> Path:
        return self.out / "balanced_ids.csv"

    @property
    def splits_csv(self) -> Path:
        return self.out / "splits.csv"

    @property
    def models_index(self) -> Path:
        return self.out / "models" / "index.json"

    @property
    def pvi_csv(self) -> Path:
        return self.out / "pvi_records.csv"

    @property
    def regress_json(self) -> Path:
        return self.out / "regress.json"

    @property
    def ablation_json(self) -> Path:
        return self.out / "ablation.json"

    # -- shared loaders ---------------------------------------------------------

    def _load_clean_corpus(self) -> Corpus:
        return ingest(self.corpus_clean, "jsonl")

    def _load_labels(self) -> dict[str, int]:
        return {r.listing_id: r.label for r in read_labels(self.labels_clean, self.config.token_pair)}

    def _load_periods(self) -> dict[str, tuple[str, str]]:
        rows = read_assignments(self.periods_csv)
        return {r["listing_id"]: (r["period"], r.get("halfyear_bin", "")) for r in rows}

    def _load_balanced_ids(self) -> list[str]:
        return [r["listing_id"] for r in read_assignments(self.balanced_csv)]

    def _load_splits(self) -> dict[str, str]:
        return {r["listing_id"]: r["split"] for r in read_assignments(self.splits_csv)}

    def _group_of(self, listing_id: str, periods: dict[str, tuple[str, str]]) -> str:
        period, hy_bin = periods[listing_id]
        return hy_bin if self.config.scheme == "halfyear" else period

    # -- stages -----------------------------------------------------------------

    def stage_ingest(self) -> list[Path]:
        corpus = ingest(self.config.corpus_path, self.config.corpus_format)
        write_corpus(corpus.listings, self.corpus_clean)
        diag = self.out / "diagnostics_ingest.json"
        diag.write_text(json.dumps({
            "n_read": corpus.n_read,
            "n_kept": len(corpus.listings),
            "n_skipped": corpus.n_skipped,
            "diagnostics": corpus.diagnostics,
        }, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        return [self.corpus_clean, diag]

    def stage_labels(self) -> list[Path]:
        corpus = self._load_clean_corpus()
        if self.config.label_path is not None:
            records = read_labels(self.config.label_path, self.config.token_pair)
        else:
            client = ScorerClient(self.config.label_endpoint, ClientSettings())
            items = [(lst.id, lst.text(self.config.text_fields)) for lst in corpus.listings]
            with client:
                labels_by_id, errors = client.label_batch(
                    items, self.config.token_pair, self.config.prompt_id
                )
            if errors:
                logger.warning("labeler endpoint failed on %d listings", len(errors))
            records = [
                LabelRecord(rid, label, self.config.token_pair, self.config.prompt_id,
                            labeler_id=self.config.label_endpoint or "endpoint")
                for rid, label in labels_by_id.items()
            ]
        known = {lst.id for lst in corpus.listings}
        kept = [r for r in records if r.listing_id in known]
        if not kept:
            raise DataError("no label records match the ingested corpus")
        dropped = len(records) - len(kept)
        if dropped:
            logger.warning("labels: %d records with unknown listing ids dropped", dropped)
        by_id: dict[str, LabelRecord] = {}
        for r in kept:
            by_id[r.listing_id] = r
        write_labels([by_id[k] for k in sorted(by_id)], self.labels_clean)
        return [self.labels_clean]

    def stage_partition(self) -> list[Path]:
        corpus = self._load_clean_corpus()
        assignments, diagnostics = partition(corpus, self.config.cutoff, self.config.scheme)
        rows = [(a.listing_id, a.period, a.halfyear_bin or "") for a in assignments]
        write_assignments(rows, ("listing_id", "period", "halfyear_bin"), self.periods_csv)
        diag = self.out / "diagnostics_partition.json"
        diag.write_text(json.dumps({"excluded": diagnostics}, sort_keys=True, indent=1) + "\n",
                        encoding="utf-8")
        return [self.periods_csv, diag]

    def stage_balance(self) -> list[Path]:
        corpus = self._load_clean_corpus()
        labels = self._load_labels()
        periods = self._load_periods()
        split_first = self.config.stage_order[0] == "split"
        groups: dict[str, str] = {}
        splits = self._load_splits() if split_first else {}
        for lst in corpus.listings:
            if lst.id not in periods or lst.id not in labels:
                continue
            group = self._group_of(lst.id, periods)
            if split_first:
                if lst.id not in splits:
                    continue
                group = f"{group}|{splits[lst.id]}"
            groups[lst.id] = group
        kept = balance(corpus, labels, groups, self.config.balance_seed)
        write_assignments([(k,) for k in kept], ("listing_id",), self.balanced_csv)
        return [self.balanced_csv]

    def stage_split(self) -> list[Path]:
        split_first = self.config.stage_order[0] == "split"
        if split_first:
            corpus = self._load_clean_corpus()
            labels = self._load_labels()
            periods = self._load_periods()
            ids = [lst.id for lst in corpus.listings if lst.id in labels and lst.id in periods]
        else:
            ids = self._load_balanced_ids()
        assignment = split(ids, self.config.split_seed, self.config.split_ratios)
        rows = [(lst_id, assignment[lst_id]) for lst_id in ids]
        write_assignments(rows, ("listing_id", "split"), self.splits_csv)
        return [self.splits_csv]

    def _grouped_examples(self) -> dict[str, dict[str, list[tuple[str, str, int]]]]:
        """{group: {split: [(listing_id, text, label)]}} over the balanced sample."""
        corpus = self._load_clean_corpus()
        labels = self._load_labels()
        periods = self._load_periods()
        balanced = set(self._load_balanced_ids())
        splits = self._load_splits()
        out: dict[str, dict[str, list[tuple[str, str, int]]]] = {}
        for lst in corpus.listings:
            if lst.id not in balanced or lst.id not in splits or lst.id not in periods:
                continue
            group = self._group_of(lst.id, periods)
            out.setdefault(group, {}).setdefault(splits[lst.id], []).append(
                (lst.id, lst.text(self.config.text_fields), labels[lst.id])
            )
        return out

    def stage_fit(self) -> list[Path]:
        grouped = self._grouped_examples()
        index: dict[str, dict] = {}
        outputs: list[Path] = []
        for group in sorted(grouped):
            by_split = grouped[group]
            train = [(text, y) for _id, text, y in by_split.get("train", [])]
            val = [(text, y) for _id, text, y in by_split.get("validation", [])]
            if not train or not val:
                raise DataError(f"group {group!r} is missing a train or validation split")
            train_labels = [y for _t, y in train]
            null_model = fit_null(train_labels)
            if self.config.class_weights is not None:
                content = fit_weighted(train, val, self.config.class_weights,
                                       self.config.fit, self.config.fit_seed)
            else:
                content = fit_content(train, val, self.config.fit, self.config.fit_seed)
            safe = group.replace("/", "_")
            null_path = self.out / "models" / f"{safe}__null.json"
            content_path = self.out / "models" / f"{safe}__content.json"
            null_model.save(null_path)
            content.save(content_path)
            outputs.extend([null_path, content_path])
            index[group] = {
                "null": str(null_path.relative_to(self.out)),
                "content": str(content_path.relative_to(self.out)),
                "weighted": content.weighted,
                "n_train": len(train),
                "n_validation": len(val),
                "validation_bits": content.training_meta.get("final_validation_bits"),
            }
        self.models_index.write_text(json.dumps(index, sort_keys=True, indent=1) + "\n",
                                     encoding="utf-8")
        outputs.append(self.models_index)
        return outputs

    def _load_models(self) -> dict[str, dict[str, FittedModel]]:
        index = json.loads(self.models_index.read_text(encoding="utf-8"))
        return {
            group: {
                "null": FittedModel.load(self.out / entry["null"]),
                "content": FittedModel.load(self.out / entry["content"]),
            }
            for group, entry in index.items()
        }

    def stage_pvi(self) -> list[Path]:
        grouped = self._grouped_examples()
        periods = self._load_periods()
        models = self._load_models()
        eval_split = self.config.pvi_split
        records = []
        for group in sorted(grouped):
            rows = grouped[group].get(eval_split, [])
            if not rows:
                raise DataError(f"group {group!r} has no {eval_split} examples")
            null_model = models[group]["null"]
            content = models[group]["content"]
            texts = [text for _id, text, _y in rows]
            n_log_pos, n_log_neg = null_model.score_batch(texts)
            c_log_pos, c_log_neg = content.score_batch(texts)
            for i, (lst_id, _text, y) in enumerate(rows):
                period, hy_bin = periods[lst_id]
                records.append(make_record(
                    listing_id=lst_id,
                    log2p_null=float(n_log_pos[i] if y == 1 else n_log_neg[i]),
                    log2p_content=float(c_log_pos[i] if y == 1 else c_log_neg[i]),
                    period=period,
                    halfyear_bin=hy_bin,
                    split=eval_split,
                ))
        records.sort(key=lambda r: r.listing_id)
        write_records(records, self.pvi_csv)
        return [self.pvi_csv]

    def _weighted_flag(self) -> bool:
        return self.config.class_weights is not None

    def stage_regress(self) -> list[Path]:
        corpus = self._load_clean_corpus()
        records = read_records(self.pvi_csv)
        table = build_table(records, corpus.by_id())
        blocks: dict[str, dict] = {}
        for spec in self.config.regressions:
            result = fit_ols(table, spec)
            ci = {name: result.conf_int(name) for name in result.names}
            blocks[spec.name] = {
                "names": result.names,
                "coefficients": result.coefficients,
                "se": result.se(),
                "p_values": result.p_values,
                "ci": {k: list(v) for k, v in ci.items()},
                "se_type": result.se_type,
                "n": result.n,
                "df": result.df,
                "n_dropped": result.n_dropped,
                "residual_std_error": result.residual_std_error,
                "f_statistic": result.f_statistic,
                "f_pvalue": result.f_pvalue,
            }
        doc: dict = {"specs": blocks, "weighted": self._weighted_flag()}

        if self.config.scheme == "halfyear":
            rows, _res = halfyear_effects(table)
            doc["halfyear"] = [
                {"bin": r.bin, "coef": r.coef, "se": r.se, "ci_lo": r.ci_lo,
                 "ci_hi": r.ci_hi, "p": r.p, "n": r.n, "is_reference": r.is_reference}
                for r in rows
            ]
        categories = {c for c in table["category"] if c}
        if len(categories) >= 2:
            cat_rows, pooled, _res = category_effects(table)
            doc["categories"] = [
                {"category": r.category, "effect": r.effect, "se": r.se, "p": r.p,
                 "n": r.n, "is_reference": r.is_reference, "low_support": r.low_support}
                for r in [pooled, *cat_rows]
            ]
        self.regress_json.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                                     encoding="utf-8")
        outputs = [self.regress_json]
        for spec_name in sorted(blocks):
            coef_csv = self.out / "tables" / f"coefficients_{spec_name}.csv"
            _write_coefficients_csv(blocks[spec_name], coef_csv)
            outputs.append(coef_csv)
        return outputs

    def stage_ablate(self) -> list[Path]:
        if not self.config.ablation_enabled:
            return []
        grouped = self._grouped_examples()
        models = self._load_models()
        if self.config.ablation_lexicon is not None:
            entries, _diags = load_lexicon(self.config.ablation_lexicon)
        else:
            tokens = sorted({
                tok for pair in models.values() for tok in pair["content"].token_weights
            })
            entries = [LexiconEntry(tok) for tok in tokens]
        rows: list[AblationSlice] = []
        for group in sorted(grouped):
            for lst_id, text, y in grouped[group].get(self.config.pvi_split, []):
                rows.append(AblationSlice(
                    listing_id=lst_id, text=text, label=y,
                    content_model=models[group]["content"],
                    null_model=models[group]["null"],
                ))
        records = ablate_many(entries, rows, self.config.ablation_floor, self.threads)
        ranked = rank(records, self.config.ablation_floor, self.config.ablation_top_k)
        table_csv = self.out / "tables" / "ablation.csv"
        write_ablation_table(sorted(records, key=lambda r: r.token), table_csv)
        self.ablation_json.write_text(json.dumps({
            "approximation_note": (
                "rescored with models fitted on the unmodified distribution; "
                "values approximate the change in pointwise usable information"
            ),
            "floor": self.config.ablation_floor,
            "n_tokens": len(records),
            "n_excluded": ranked.n_excluded,
            "top_positive": [_ablation_row(r) for r in ranked.top_positive],
            "top_negative": [_ablation_row(r) for r in ranked.top_negative],
            "diagnostics": ranked.diagnostics,
        }, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        return [table_csv, self.ablation_json]

    def stage_report(self) -> list[Path]:
        from . import report as report_mod
        return report_mod.render(self)

    # -- execution ---------------------------------------------------------------

    def execute(self) -> dict:
        inputs_corpus = {"corpus": self.config.corpus_path}
        self._run_stage("ingest", inputs_corpus, self.stage_ingest)
        label_inputs = {"corpus_clean": self.corpus_clean}
        if self.config.label_path is not None:
            label_inputs["labels"] = self.config.label_path
        self._run_stage("labels", label_inputs, self.stage_labels)
        self._run_stage("partition", {"corpus_clean": self.corpus_clean}, self.stage_partition)

        sample_inputs = {
            "corpus_clean": self.corpus_clean,
            "labels_clean": self.labels_clean,
            "periods": self.periods_csv,
        }
        if self.config.stage_order[0] == "balance":
            self._run_stage("balance", sample_inputs, self.stage_balance)
            self._run_stage("split", {"balanced": self.balanced_csv}, self.stage_split)
        else:
            self._run_stage("split", sample_inputs, self.stage_split)
            self._run_stage("balance", {**sample_inputs, "splits": self.splits_csv},
                            self.stage_balance)

        data_inputs = {
            "corpus_clean": self.corpus_clean,
            "labels_clean": self.labels_clean,
            "periods": self.periods_csv,
            "balanced": self.balanced_csv,
            "splits": self.splits_csv,
        }
        self._run_stage("fit", data_inputs, self.stage_fit)
        self._run_stage("pvi", {**data_inputs, "models": self.models_index}, self.stage_pvi)
        self._run_stage("regress", {"pvi": self.pvi_csv, "corpus_clean": self.corpus_clean},
                        self.stage_regress)
        if self.config.ablation_enabled:
            ablate_inputs = {**data_inputs, "models": self.models_index}
            if self.config.ablation_lexicon is not None:
                ablate_inputs["lexicon"] = self.config.ablation_lexicon
            self._run_stage("ablate", ablate_inputs, self.stage_ablate)
        report_inputs = {"pvi": self.pvi_csv, "regress": self.regress_json}
        if self.config.ablation_enabled:
            report_inputs["ablation"] = self.ablation_json
        self._run_stage("report", report_inputs, self.stage_report)
        return self.manifest


def _ablation_row(r) -> dict:
    return {
        "token": r.token, "N": r.n_support,
        "mean_with": r.mean_pvi_with, "mean_without": r.mean_pvi_without,
        "delta": r.delta_pvi, "pos_gold": r.pos_gold, "pos_pred": r.pos_pred,
        "pos_pred_without": r.pos_pred_without, "polarity": r.polarity,
        "source": "|".join(sorted(r.sources)),
    }


def _write_coefficients_csv(block: dict, path: Path) -> None:
    import csv
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("name", "estimate", "se", "se_type", "t", "p", "ci_lo", "ci_hi", "n"))
        for name in block["names"]:
            est = block["coefficients"][name]
            se = block["se"][name]
            ci_lo, ci_hi = block["ci"][name]
            writer.writerow((
                name, repr(est), repr(se), block["se_type"],
                repr(est / se if se else float("nan")), repr(block["p_values"][name]),
                repr(ci_lo), repr(ci_hi), block["n"],
            ))


def run(config: PipelineConfig, out_dir: str | Path, resume: bool = False,
        threads: int = 1) -> dict:
    """Execute the full pipeline; returns the manifest."""
    return PipelineRun(config, out_dir, resume=resume, threads=threads).execute()


# ---------------------------------------------------------------------------
# Seed sweep
# ---------------------------------------------------------------------------

def seed_sweep(config: PipelineConfig, seeds: list[int], out_dir: str | Path,
               threads: int = 1) -> dict:
    """Re-run the pipeline once per seed and summarize estimate stability.

    Each sweep seed drives the subsample draw and the fit; the split seed
    stays at its configured value so every run is evaluated on (nearly) the
    same held-out partition, isolating the randomness injected by sampling
    and fitting.
    """
    if len(seeds) < 2:
        raise ConfigError("seed_sweep needs at least two seeds")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_seed: list[dict] = []
    pvi_groups: list[np.ndarray] = []
    for seed in seeds:
        raw = json.loads(json.dumps(config.raw))
        raw["seeds"] = {"balance": seed, "split": config.split_seed, "fit": seed}
        derived = parse_config(raw, base_dir=config.base_dir)
        run_dir = out / f"seed_{seed}"
        pipeline = PipelineRun(derived, run_dir, threads=threads)
        pipeline.execute()
        regress_doc = json.loads(pipeline.regress_json.read_text(encoding="utf-8"))
        records = read_records(pipeline.pvi_csv)
        beta = _baseline_beta(regress_doc)
        mean_by_period = {
            period: estimate([r for r in records if r.period == period]).v_information
            for period in sorted({r.period for r in records})
        }
        per_seed.append({
            "seed": seed,
            "beta": beta,
            "mean_pvi": mean_by_period,
        })
        pvi_groups.append(np.array([r.pvi for r in records]))
    betas = [row["beta"] for row in per_seed]
    spread = max(abs(a - b) for a in betas for b in betas)
    anova_f, anova_p = sstats.f_oneway(*pvi_groups)
    report = {
        "seeds": seeds,
        "per_seed": per_seed,
        "beta_spread": spread,
        "anova_f": float(anova_f),
        "anova_p": float(anova_p),
    }
    (out / "sweep_report.json").write_text(
        json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    import csv
    with (out / "sweep_report.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("seed", "beta", *(f"mean_pvi[{p}]" for p in sorted(per_seed[0]["mean_pvi"]))))
        for row in per_seed:
            writer.writerow((row["seed"], repr(row["beta"]),
                             *(repr(v) for _k, v in sorted(row["mean_pvi"].items()))))
    return report


def _baseline_beta(regress_doc: dict) -> float:
    specs = regress_doc["specs"]
    for name in ("baseline", *sorted(specs)):
        block = specs.get(name)
        if block and "after" in block["coefficients"]:
            return float(block["coefficients"]["after"])
    raise DataError("no regression block with an 'after' coefficient; cannot summarize sweep")
