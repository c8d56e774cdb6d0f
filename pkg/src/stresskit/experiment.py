"""Experiment configuration and the batch commands behind the CLI.

Configuration is layered: built-in defaults, then a named preset, then a JSON
config file, then command-line overrides. Every output file embeds the
resolved configuration (minus `jobs` and `out_dir`, which do not affect
results) so a run can be reproduced from any of its artifacts.
"""

from __future__ import annotations

import copy
import itertools
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .aggregation import (
    HourPredictionBundle,
    group_ensemble_matrix,
    lda_meta_vote_fit,
    select_threshold,
)
from .classifiers import ClassifierSpec, TrainedModel, fit, save_model
from .data_model import (
    HANDCRAFTED_GROUPS,
    MINUTES_PER_HOUR,
    DatasetSplit,
    FeatureManifest,
    HourInstance,
    MinuteDataset,
    explode_to_minutes,
    hourly_dataset,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, DataError, NumericalError, StageError, StressKitError
from .evaluation import (
    EvaluationReport,
    evaluate,
    read_csv,
    roc_svg,
    split_indices,
    write_csv,
    write_roc_csv,
)
from .imputation import ImputationPolicy, RemovedRow, impute, write_removal_manifest
from .seeding import sub_seed
from .shapley import exact_shapley, sampled_shapley, summarize_importance, write_importance
from .shift_diagnostic import DEFAULT_SPECS, build_origin_dataset, run_shift_diagnostic
from .synth_gen import GenConfig, generate

GRANULARITIES = ("hourly", "minute")
VOTING_MECHANISMS = ("mean", "any", "lda")
IMPUTATION_METHODS = ("none", "mean", "euclidean")
EVALUATION_MODES = ("holdout", "test")

PROPOSED_REFERENCE = (
    "reference only, not reproducible on synthetic data: the proposed configuration on the "
    "real SMILE data reached accuracy 0.9077, f1 0.9124, sensitivity 0.9042, specificity 0.9108"
)
CHALLENGE_REFERENCE = (
    "reference only, not reproducible on synthetic data: the challenge configuration on the "
    "real SMILE test split reached accuracy 0.5923"
)
SWEEP_REFERENCE = (
    "reference only, not reproducible on synthetic data: on real SMILE data the "
    "ecg_hc / extra_trees / hourly cell reached accuracy 0.73, f1 0.71"
)

DEFAULTS: dict[str, Any] = {
    "train_path": None,
    "test_path": None,
    "manifest_path": None,
    "generator": None,
    "groups": None,
    "granularity": "hourly",
    "imputation": {"method": "mean", "comparator_groups": [], "fallback": "mean", "standardize": False},
    "classifiers": [{"kind": "extra_trees"}],
    "voting": {"mechanism": "mean", "threshold": 0.5},
    "split": {"train_frac": 0.8, "stratified": True},
    "evaluation": "holdout",
    "default_class": "majority",
    "seed": 0,
    "out_dir": "out",
    "jobs": None,
    "preset": None,
    "importance": {
        "classifier": {"kind": "logreg"},
        "groups": list(HANDCRAFTED_GROUPS),
        "granularity": "hourly",
        "n_permutations": 1000,
        "background": 100,
        "max_instances": 50,
        "exact": False,
    },
    "shift": {"granularity": "hourly", "imputation": None, "classifiers": None},
    "sweep": {"granularities": ["hourly", "minute"], "ensemble": True},
    "impute": {"inputs": ["train", "test"]},
    "roc": {"input": None},
}

PRESETS: dict[str, dict[str, Any]] = {
    "proposed": {
        "groups": ["ecg_hc", "gsr_hc"],
        "granularity": "hourly",
        "imputation": {"method": "mean"},
        "classifiers": [{"kind": "extra_trees"}],
        "evaluation": "holdout",
        "split": {"train_frac": 0.8, "stratified": True},
    },
    "challenge": {
        "groups": ["ecg_hc", "gsr_hc"],
        "granularity": "minute",
        "imputation": {"method": "euclidean", "comparator_groups": ["ecg_hc", "gsr_hc"], "fallback": "mean"},
        "classifiers": [{"kind": "lda"}],
        "voting": {"mechanism": "lda"},
        "evaluation": "test",
    },
}

# sections merged key by key rather than replaced wholesale
_NESTED = ("imputation", "voting", "split", "importance", "shift", "sweep", "impute", "roc")


def merge_layers(*layers: Mapping[str, Any] | None) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for layer in layers:
        for key, value in (layer or {}).items():
            if key in _NESTED and isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
                out[key] = {**out[key], **copy.deepcopy(dict(value))}
            else:
                out[key] = copy.deepcopy(value)
    return out


def load_config_file(path) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return obj


@dataclass(frozen=True)
class ExperimentConfig:
    train_path: str | None = None
    test_path: str | None = None
    manifest_path: str | None = None
    generator: dict | None = None
    groups: tuple[str, ...] | None = None
    granularity: str = "hourly"
    imputation: dict = field(default_factory=lambda: dict(DEFAULTS["imputation"]))
    classifiers: tuple[ClassifierSpec, ...] = (ClassifierSpec("extra_trees"),)
    voting: dict = field(default_factory=lambda: dict(DEFAULTS["voting"]))
    split: dict = field(default_factory=lambda: dict(DEFAULTS["split"]))
    evaluation: str = "holdout"
    default_class: Any = "majority"
    seed: int = 0
    out_dir: str = "out"
    jobs: int = 1
    preset: str | None = None
    importance: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["importance"]))
    shift: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["shift"]))
    sweep: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["sweep"]))
    impute: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["impute"]))
    roc: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["roc"]))

    @classmethod
    def resolve(
        cls,
        preset: str | None = None,
        file_layer: Mapping[str, Any] | None = None,
        overrides: Mapping[str, Any] | None = None,
    ) -> "ExperimentConfig":
        """Layer defaults < preset < config file < overrides and validate."""
        file_layer = dict(file_layer or {})
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        name = overrides.get("preset") or file_layer.get("preset") or preset
        if name is not None and name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        layers = [DEFAULTS, PRESETS.get(name, {}), file_layer, overrides, {"preset": name}]
        return cls.from_dict(merge_layers(*layers))

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "ExperimentConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        kw = merge_layers(DEFAULTS, obj)
        specs = kw["classifiers"]
        if not isinstance(specs, (list, tuple)):
            raise ConfigError("classifiers must be a list of specs")
        kw["classifiers"] = tuple(ClassifierSpec.from_dict(s) for s in specs)
        if kw["groups"] is not None:
            if isinstance(kw["groups"], str) or not isinstance(kw["groups"], (list, tuple)):
                raise ConfigError("groups must be a list of group names")
            kw["groups"] = tuple(kw["groups"])
        if kw["jobs"] is None:
            kw["jobs"] = os.cpu_count() or 1
        return cls(**kw)

    def __post_init__(self) -> None:
        if self.generator is not None and self.train_path is not None:
            raise ConfigError("give either dataset paths or a generator config, not both")
        if self.generator is not None:
            if not isinstance(self.generator, Mapping):
                raise ConfigError("generator must be an object of generator options")
            GenConfig.from_dict({"seed": 0, **self.generator})
        if self.groups is not None and not self.groups:
            raise ConfigError("groups must not be empty")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"granularity must be one of {GRANULARITIES}")
        imputation_policy(self.imputation)
        if not self.classifiers:
            raise ConfigError("at least one classifier spec is required")
        mech = self.voting.get("mechanism")
        if mech not in VOTING_MECHANISMS:
            raise ConfigError(f"voting mechanism must be one of {VOTING_MECHANISMS}")
        thr = self.voting.get("threshold", 0.5)
        if thr != "dynamic" and (isinstance(thr, bool) or not isinstance(thr, (int, float)) or not 0 <= thr <= 1):
            raise ConfigError("voting threshold must be a number in [0, 1] or 'dynamic'")
        frac = self.split.get("train_frac")
        if isinstance(frac, bool) or not isinstance(frac, (int, float)) or not 0 < frac < 1:
            raise ConfigError("split.train_frac must lie strictly between 0 and 1")
        if not isinstance(self.split.get("stratified", True), bool):
            raise ConfigError("split.stratified must be true or false")
        if self.evaluation not in EVALUATION_MODES:
            raise ConfigError(f"evaluation must be one of {EVALUATION_MODES}")
        if self.default_class not in ("majority", 0, 1) or isinstance(self.default_class, bool):
            raise ConfigError("default_class must be 'majority', 0 or 1")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if isinstance(self.jobs, bool) or not isinstance(self.jobs, int) or self.jobs < 1:
            raise ConfigError("jobs must be a positive integer")
        grans = self.sweep.get("granularities", [])
        if not grans or any(g not in GRANULARITIES for g in grans):
            raise ConfigError(f"sweep.granularities must be a non-empty subset of {GRANULARITIES}")
        imp = self.importance
        for key in ("n_permutations", "background", "max_instances"):
            v = imp.get(key)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"importance.{key} must be a positive integer")
        ClassifierSpec.from_dict(imp.get("classifier"))
        if self.shift.get("granularity", "hourly") not in GRANULARITIES:
            raise ConfigError(f"shift.granularity must be one of {GRANULARITIES}")
        if self.shift.get("imputation") is not None:
            imputation_policy(self.shift["imputation"])

    # -- serialisation ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = {name: copy.deepcopy(getattr(self, name)) for name in self.__dataclass_fields__}
        d["classifiers"] = [s.to_dict() for s in self.classifiers]
        d["groups"] = list(self.groups) if self.groups is not None else None
        if self.generator is not None:
            d["generator"] = self.generator_config().to_dict()
        return d

    def result_dict(self) -> dict[str, Any]:
        """The part of the config that determines results (no jobs, no out_dir)."""
        d = self.to_dict()
        d.pop("jobs")
        d.pop("out_dir")
        return d

    def header(self) -> dict[str, Any]:
        return {"stresskit_version": __version__, "config": self.result_dict()}

    def header_lines(self) -> list[str]:
        return [
            f"stresskit {__version__}",
            "config: " + json.dumps(self.result_dict(), sort_keys=True, separators=(",", ":")),
        ]

    def generator_config(self) -> GenConfig:
        gen = dict(self.generator or {})
        gen.setdefault("seed", sub_seed(self.seed, "generator"))
        return GenConfig.from_dict(gen)


def imputation_policy(spec: Mapping[str, Any] | None) -> ImputationPolicy | None:
    """Config section to policy; method 'none' means complete-case (None)."""
    if spec is None:
        return None
    if not isinstance(spec, Mapping):
        raise ConfigError("imputation must be an object")
    unknown = set(spec) - {"method", "comparator_groups", "fallback", "standardize"}
    if unknown:
        raise ConfigError(f"unknown imputation option(s): {sorted(unknown)}")
    method = spec.get("method", "mean")
    if method not in IMPUTATION_METHODS:
        raise ConfigError(f"imputation method must be one of {IMPUTATION_METHODS}")
    if method == "none":
        return None
    return ImputationPolicy(
        method,
        tuple(spec.get("comparator_groups", ())),
        spec.get("fallback", "mean"),
        bool(spec.get("standardize", False)),
    )


# -- helpers -------------------------------------------------------------------


@contextmanager
def stage(name: str):
    """Re-raise any failure inside the block as a StageError naming the stage."""
    try:
        yield
    except StageError:
        raise
    except np.linalg.LinAlgError as exc:
        raise StageError(name, NumericalError(str(exc))) from exc
    except (StressKitError, ValueError, ArithmeticError, OSError) as exc:
        raise StageError(name, exc) from exc


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False))
        fh.write("\n")


@dataclass(frozen=True, eq=False)
class LoadedData:
    train: DatasetSplit
    test: DatasetSplit | None
    manifest: FeatureManifest


def load_data(cfg: ExperimentConfig, need_test: bool = False) -> LoadedData:
    manifest = FeatureManifest.load(cfg.manifest_path) if cfg.manifest_path else FeatureManifest.default()
    if cfg.generator is not None:
        train, test, _ = generate(cfg.generator_config(), manifest)
        return LoadedData(train, test, manifest)
    if cfg.train_path is None:
        raise ConfigError("no data source: give train_path (and test_path) or a generator config")
    if need_test and cfg.test_path is None:
        raise ConfigError("this command needs test_path as well as train_path")
    for p in (cfg.train_path, cfg.test_path):
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"dataset file not found: {p}")
    train = load_dataset(cfg.train_path, manifest, "train")
    test = load_dataset(cfg.test_path, manifest, "test") if cfg.test_path else None
    return LoadedData(train, test, manifest)


def _resolve_groups(manifest: FeatureManifest, groups) -> tuple[str, ...]:
    return manifest.resolve(groups)


def _partition(cfg: ExperimentConfig, data: LoadedData) -> tuple[DatasetSplit, DatasetSplit]:
    """(fit split, evaluation split) according to cfg.evaluation."""
    if cfg.evaluation == "test":
        if data.test is None:
            raise ConfigError("evaluation 'test' needs a test split")
        return data.train, data.test
    tr, ho = split_indices(
        data.train.labels,
        cfg.split["train_frac"],
        cfg.split.get("stratified", True),
        sub_seed(cfg.seed, "split"),
    )
    return data.train.subset(np.sort(tr)), data.train.subset(np.sort(ho))


# -- imputation over row datasets ---------------------------------------------


def _prepare_rows(
    train_rows: MinuteDataset, eval_rows: MinuteDataset, policy: ImputationPolicy | None
) -> tuple[MinuteDataset, MinuteDataset, np.ndarray, list[RemovedRow]]:
    """Impute (or complete-case filter) both sides.

    Rows with no selected group present carry no data and never reach a
    classifier. Returns (train, eval, eval_row_positions, removed) where
    eval_row_positions indexes the surviving rows in `eval_rows`.
    """
    tr = train_rows.take(np.flatnonzero(train_rows.present.any(axis=1)))
    ev_pos = np.flatnonzero(eval_rows.present.any(axis=1))
    ev = eval_rows.take(ev_pos)
    if policy is None:
        tr = tr.take(np.flatnonzero(tr.complete_rows()))
        keep = ev.complete_rows()
        removed = [
            RemovedRow(str(h), int(m), "incomplete row")
            for h, m in zip(ev.hour_ids[~keep], ev.minute_index[~keep])
        ]
        return tr, ev.take(np.flatnonzero(keep)), ev_pos[keep], removed
    if not len(tr):
        raise DataError("no training rows carry data for the selected groups")
    tr_imp, removed_tr = impute(tr, tr, policy)
    ev_imp, removed_ev = impute(tr, ev, policy)
    if removed_ev:
        gone = {(r.hour_id, r.minute_index) for r in removed_ev}
        keep = np.array([(str(h), int(m)) not in gone for h, m in zip(ev.hour_ids, ev.minute_index)], bool)
        ev_pos = ev_pos[keep]
    return tr_imp, ev_imp, ev_pos, removed_tr + removed_ev


# -- one experimental cell -------------------------------------------------------


@dataclass(eq=False)
class CellResult:
    hour_ids: list[str]
    truth: np.ndarray
    raw_scores: np.ndarray  # NaN where no prediction was possible
    scores: np.ndarray
    decisions: np.ndarray
    used_default: np.ndarray
    mechanism: str
    report: EvaluationReport
    minute_report: EvaluationReport | None
    model: TrainedModel | None
    threshold: float | None = None
    removed: list[RemovedRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def _default_class(setting, train_labels: np.ndarray) -> tuple[int, float]:
    prevalence = float(np.mean(train_labels)) if train_labels.size else 0.5
    cls = int(prevalence >= 0.5) if setting == "majority" else int(setting)
    return cls, prevalence


def _minute_bundles(split: DatasetSplit, rows: MinuteDataset, proba: np.ndarray, labels: np.ndarray):
    """(n_hours, 60) proba / label grids for `split`, NaN / -1 where unclassified."""
    pos = {h: i for i, h in enumerate(split.hour_ids)}
    P = np.full((len(split), MINUTES_PER_HOUR), np.nan)
    L = np.full((len(split), MINUTES_PER_HOUR), -1, dtype=np.int64)
    if len(rows):
        hi = np.array([pos[h] for h in rows.hour_ids], dtype=np.int64)
        P[hi, rows.minute_index] = proba
        L[hi, rows.minute_index] = labels
    return P, L


def _bundles(split: DatasetSplit, P: np.ndarray, L: np.ndarray) -> list[HourPredictionBundle]:
    return [HourPredictionBundle(h, P[i], L[i]) for i, h in enumerate(split.hour_ids)]


def _out_of_fold_grids(
    spec: ClassifierSpec, fit_split: DatasetSplit, train_rows: MinuteDataset, seed: int, n_jobs: int
):
    """Minute predictions for every training hour from a model that never saw that hour."""
    a, b = split_indices(fit_split.labels, 0.5, stratified=True, seed=sub_seed(seed, "calibration"))
    P = np.full((len(fit_split), MINUTES_PER_HOUR), np.nan)
    L = np.full((len(fit_split), MINUTES_PER_HOUR), -1, dtype=np.int64)
    ids = np.asarray(fit_split.hour_ids, dtype=object)
    for fold, (fit_idx, pred_idx) in enumerate(((a, b), (b, a))):
        in_fit = np.isin(train_rows.hour_ids, ids[fit_idx])
        fit_rows = train_rows.take(np.flatnonzero(in_fit))
        pred_rows = train_rows.take(np.flatnonzero(~in_fit))
        model = fit(spec.with_seed(sub_seed(spec.seed, f"fold/{fold}")), fit_rows.features,
                    fit_rows.labels, n_jobs=n_jobs, layout=fit_rows.layout)
        p, l = _minute_bundles(
            fit_split, pred_rows, model.predict_proba(pred_rows.features), model.predict(pred_rows.features)
        )
        P[pred_idx], L[pred_idx] = p[pred_idx], l[pred_idx]
    return P, L


def run_cell(
    fit_split: DatasetSplit,
    eval_split: DatasetSplit,
    groups: Sequence[str],
    granularity: str,
    policy: ImputationPolicy | None,
    spec: ClassifierSpec,
    voting: Mapping[str, Any],
    default_class="majority",
    seed: int = 0,
    n_jobs: int = 1,
) -> CellResult:
    """ingest -> impute -> (explode) -> fit -> predict -> (vote) -> evaluate."""
    with stage("ingest"):
        if granularity == "hourly":
            tr_rows, ev_rows = hourly_dataset(fit_split, groups), hourly_dataset(eval_split, groups)
        else:
            tr_rows, ev_rows = explode_to_minutes(fit_split, groups), explode_to_minutes(eval_split, groups)
        if not len(eval_split):
            raise DataError("evaluation split is empty")
    with stage("impute"):
        tr, ev, ev_pos, removed = _prepare_rows(tr_rows, ev_rows, policy)
        if not len(tr):
            raise DataError("no usable training rows after imputation")
    with stage("fit"):
        model = fit(spec, tr.features, tr.labels, n_jobs=n_jobs, layout=tr.layout)
    with stage("predict"):
        proba = model.predict_proba(ev.features)
        pred = model.predict(ev.features)
    default_cls, prevalence = _default_class(default_class, fit_split.labels)
    n = len(eval_split)
    raw = np.full(n, np.nan)
    decision = np.full(n, -1, dtype=np.int64)
    minute_report = None
    threshold = None
    notes: list[str] = []
    if granularity == "hourly":
        mechanism = "direct"
        raw[ev_pos] = proba
        decision[ev_pos] = pred
    else:
        mech = voting.get("mechanism", "mean")
        mechanism = mech
        with stage("vote"):
            P, L = _minute_bundles(eval_split, ev, proba, pred)
            has = ~np.isnan(P).all(axis=1)
            if mech == "mean":
                thr = voting.get("threshold", 0.5)
                if thr == "dynamic":
                    oP, oL = _out_of_fold_grids(spec, fit_split, tr, seed, n_jobs)
                    thr = select_threshold(_bundles(fit_split, oP, oL), fit_split.labels)
                threshold = float(thr)
                means = np.nanmean(P[has], axis=1)
                raw[has] = means
                decision[has] = (means >= threshold).astype(np.int64)
            elif mech == "any":
                raw[has] = np.nanmax(P[has], axis=1)
                decision[has] = (L[has] == 1).any(axis=1).astype(np.int64)
            else:
                oP, oL = _out_of_fold_grids(spec, fit_split, tr, seed, n_jobs)
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    voter = lda_meta_vote_fit(_bundles(fit_split, oP, oL), fit_split.labels)
                notes.extend(str(w.message) for w in caught)
                sel = [b for b, h in zip(_bundles(eval_split, P, L), has) if h]
                if sel:
                    raw[has] = voter.proba(sel)
                    decision[has] = voter.vote(sel)
        with stage("evaluate"):
            if len(ev):
                minute_report = evaluate(proba, ev.labels, predicted=pred, metadata={"level": "minute"})
    used_default = decision < 0
    scores = np.where(used_default, prevalence, raw)
    decision = np.where(used_default, default_cls, decision)
    with stage("evaluate"):
        truth = eval_split.labels
        report = evaluate(scores, truth, predicted=decision, metadata={
            "level": "hour",
            "mechanism": mechanism,
            "n_default_class": int(used_default.sum()),
            "default_class": default_cls,
            "threshold": threshold,
            "notes": notes,
        })
    return CellResult(
        list(eval_split.hour_ids), truth, raw, scores, decision, used_default, mechanism,
        report, minute_report, model, threshold, removed, notes,
    )


def _hour_decision_rows(cell: CellResult) -> list[dict]:
    return [
        {
            "hour_id": h,
            "mechanism": "default_class" if d else cell.mechanism,
            "decision": int(dec),
            "statistic": float(s),
            "truth": int(t),
        }
        for h, d, dec, s, t in zip(cell.hour_ids, cell.used_default, cell.decisions, cell.scores, cell.truth)
    ]


# -- commands ----------------------------------------------------------------------


def _out_dir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def run_generate(cfg: ExperimentConfig) -> dict[str, str]:
    """Write manifest, train/test JSONL and the truth CSV from the generator config."""
    with stage("generate"):
        gen = cfg.generator_config()
        manifest = FeatureManifest.load(cfg.manifest_path) if cfg.manifest_path else FeatureManifest.default()
        train, test, truth = generate(gen, manifest)
    out = _out_dir(cfg)
    meta = cfg.header()
    paths = {
        "manifest": os.path.join(out, "manifest.json"),
        "train": os.path.join(out, "train.jsonl"),
        "test": os.path.join(out, "test.jsonl"),
        "truth": os.path.join(out, "truth.csv"),
    }
    with stage("write"):
        manifest.save(paths["manifest"], meta=meta)
        save_dataset(train, paths["train"], meta=meta)
        save_dataset(test, paths["test"], meta=meta)
        truth.to_csv(paths["truth"], header_lines=cfg.header_lines())
    return paths


def run_pipeline(cfg: ExperimentConfig) -> list[CellResult]:
    with stage("ingest"):
        data = load_data(cfg, need_test=cfg.evaluation == "test")
        groups = _resolve_groups(data.manifest, cfg.groups)
        fit_split, eval_split = _partition(cfg, data)
        policy = imputation_policy(cfg.imputation)
    cells = []
    for i, spec in enumerate(cfg.classifiers):
        spec = spec.with_seed(sub_seed(cfg.seed, f"model/{i}/{spec.kind}/{spec.seed}"))
        cells.append(run_cell(
            fit_split, eval_split, groups, cfg.granularity, policy, spec, cfg.voting,
            cfg.default_class, cfg.seed, n_jobs=cfg.jobs,
        ))
    reference = CHALLENGE_REFERENCE if cfg.preset == "challenge" else PROPOSED_REFERENCE
    out = _out_dir(cfg)
    header = cfg.header_lines() + [reference]
    with stage("write"):
        rows, results = [], []
        for i, (spec, cell) in enumerate(zip(cfg.classifiers, cells)):
            tag = "" if len(cells) == 1 else f"{i}_{spec.kind}_"
            row = {"classifier": spec.kind, "granularity": cfg.granularity, "mechanism": cell.mechanism}
            row.update(cell.report.flat_row())
            if cell.minute_report is not None:
                row.update(cell.minute_report.flat_row("minute_"))
            rows.append(row)
            results.append({
                "classifier": spec.to_dict(),
                "hour_report": cell.report.to_dict(),
                "minute_report": cell.minute_report.to_dict() if cell.minute_report else None,
                "n_removed_rows": len(cell.removed),
            })
            write_roc_csv(os.path.join(out, f"{tag}roc.csv"), cell.report.roc_points, header)
            with open(os.path.join(out, f"{tag}roc.svg"), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(_svg_with_header(cell.report, cfg))
            write_csv(os.path.join(out, f"{tag}hour_decisions.csv"), _hour_decision_rows(cell), header,
                      columns=["hour_id", "mechanism", "decision", "statistic", "truth"])
            if cell.model is not None:
                save_model(cell.model, os.path.join(out, f"{tag}model.json"))
        write_csv(os.path.join(out, "report.csv"), rows, header)
        _write_json(os.path.join(out, "report.json"), {**cfg.header(), "reference": reference, "results": results})
    return cells


def _svg_with_header(report: EvaluationReport, cfg: ExperimentConfig) -> str:
    svg = roc_svg([(p.fpr, p.tpr) for p in report.roc_points], report.auc)
    comment = json.dumps(cfg.header(), sort_keys=True, separators=(",", ":")).replace("--", "- -")
    return f"<!-- {comment} -->\n{svg}"


# -- sweep ----------------------------------------------------------------------------

_WORKER: dict[str, Any] = {}


def _init_worker(fit_split, eval_split, policy, voting, default_class, seed) -> None:
    _WORKER.update(
        fit_split=fit_split, eval_split=eval_split, policy=policy,
        voting=voting, default_class=default_class, seed=seed,
    )


def _sweep_cell(task):
    subset, granularity, _, spec = task
    w = _WORKER
    cell = run_cell(
        w["fit_split"], w["eval_split"], subset, granularity, w["policy"], spec,
        w["voting"], w["default_class"], w["seed"], n_jobs=1,
    )
    row = {"subset": "+".join(subset), "classifier": spec.kind, "granularity": granularity,
           "mechanism": cell.mechanism}
    row.update(cell.report.flat_row())
    if cell.minute_report is not None:
        row.update(cell.minute_report.flat_row("minute_"))
    return row, cell.raw_scores


def sweep_tasks(groups: Sequence[str], specs: Sequence[ClassifierSpec], granularities, seed: int):
    """(subset, granularity, spec position, seeded spec) in deterministic cell order."""
    tasks = []
    for r in range(1, len(groups) + 1):
        for subset in itertools.combinations(groups, r):
            for gran in granularities:
                for i, spec in enumerate(specs):
                    key = f"sweep/{'+'.join(subset)}/{gran}/{i}/{spec.kind}/{spec.seed}"
                    tasks.append((subset, gran, i, spec.with_seed(sub_seed(seed, key))))
    return tasks


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    with stage("ingest"):
        data = load_data(cfg, need_test=cfg.evaluation == "test")
        groups = _resolve_groups(data.manifest, cfg.groups)
        fit_split, eval_split = _partition(cfg, data)
        policy = imputation_policy(cfg.imputation)
    grans = list(cfg.sweep["granularities"])
    tasks = sweep_tasks(groups, cfg.classifiers, grans, cfg.seed)
    init = (fit_split, eval_split, policy, cfg.voting, cfg.default_class, cfg.seed)
    if cfg.jobs == 1 or len(tasks) == 1:
        _init_worker(*init)
        results = [_run_annotated(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_init_worker, initargs=init) as pool:
            results = list(pool.map(_run_annotated, tasks))
    rows = [r for r, _ in results]
    if cfg.sweep.get("ensemble", True) and len(groups) > 1:
        singles = {
            (t[0][0], t[1], t[2]): raw for t, (_, raw) in zip(tasks, results) if len(t[0]) == 1
        }
        rows.extend(_ensemble_rows(singles, groups, cfg, fit_split, eval_split))
    out = _out_dir(cfg)
    with stage("write"):
        write_csv(os.path.join(out, "sweep.csv"), rows, cfg.header_lines() + [SWEEP_REFERENCE])
    return rows


def _run_annotated(task):
    subset, gran, _, spec = task
    try:
        return _sweep_cell(task)
    except StageError as exc:
        raise StageError(f"cell {'+'.join(subset)}/{spec.kind}/{gran}: {exc.stage}", exc.cause) from None


def _ensemble_rows(singles, groups, cfg, fit_split, eval_split) -> list[dict]:
    """Per-group ensemble: average the single-group hour probabilities that exist."""
    default_cls, prevalence = _default_class(cfg.default_class, fit_split.labels)
    rows = []
    for gran in cfg.sweep["granularities"]:
        for i, spec in enumerate(cfg.classifiers):
            ens = group_ensemble_matrix(np.stack([singles[(g, gran, i)] for g in groups]))
            missing = np.isnan(ens)
            scores = np.where(missing, prevalence, ens)
            decision = np.where(missing, default_cls, (ens >= 0.5).astype(np.int64))
            report = evaluate(scores, eval_split.labels, predicted=decision)
            row = {"subset": "ensemble(" + "+".join(groups) + ")", "classifier": spec.kind,
                   "granularity": gran, "mechanism": "group_mean"}
            row.update(report.flat_row())
            rows.append(row)
    return rows


# -- importance ----------------------------------------------------------------------------


def run_importance(cfg: ExperimentConfig):
    imp = cfg.importance
    with stage("ingest"):
        data = load_data(cfg)
        groups = _resolve_groups(data.manifest, imp.get("groups") or cfg.groups)
        fit_split, eval_split = _partition(cfg, data)
        policy = imputation_policy(cfg.imputation)
        gran = imp.get("granularity", "hourly")
        if gran == "hourly":
            tr_rows, ev_rows = hourly_dataset(fit_split, groups), hourly_dataset(eval_split, groups)
        else:
            tr_rows, ev_rows = explode_to_minutes(fit_split, groups), explode_to_minutes(eval_split, groups)
    with stage("impute"):
        tr, ev, _, _ = _prepare_rows(tr_rows, ev_rows, policy)
        if not len(tr) or not len(ev):
            raise DataError("no usable rows for attribution")
    spec = ClassifierSpec.from_dict(imp["classifier"])
    spec = spec.with_seed(sub_seed(cfg.seed, f"importance/model/{spec.seed}"))
    with stage("fit"):
        model = fit(spec, tr.features, tr.labels, n_jobs=cfg.jobs, layout=tr.layout)
    names = [f"{e.name}[{k}]" for e in tr.layout for k in range(e.dim)]
    rng = np.random.default_rng(sub_seed(cfg.seed, "shapley/sample"))
    bg_idx = np.sort(rng.permutation(len(tr))[: imp["background"]])
    ex_idx = np.sort(rng.permutation(len(ev))[: imp["max_instances"]])
    background = tr.features[bg_idx]
    exact = bool(imp.get("exact", False))
    if exact and len(names) > 15:
        raise ConfigError(f"exact attribution needs at most 15 features, selection has {len(names)}")
    results = []
    with stage("attribute"):
        for j, row in enumerate(ex_idx):
            x = ev.features[row]
            if exact:
                results.append(exact_shapley(model, x, background))
            else:
                results.append(sampled_shapley(
                    model, x, background, imp["n_permutations"], seed=sub_seed(cfg.seed, f"shapley/{j}")
                ))
        summary = summarize_importance(results, names)
    out = _out_dir(cfg)
    with stage("write"):
        write_importance(
            summary,
            os.path.join(out, "importance_summary.csv"),
            os.path.join(out, "importance_points.csv"),
            cfg.header_lines(),
        )
    return summary, results


# -- shift ------------------------------------------------------------------------------------


def run_shift(cfg: ExperimentConfig):
    sh = cfg.shift
    with stage("ingest"):
        data = load_data(cfg, need_test=True)
        if data.test is None:
            raise ConfigError("shift diagnostic needs a test split")
        groups = _resolve_groups(data.manifest, cfg.groups)
        origin = build_origin_dataset(
            data.train, data.test, groups, seed=sub_seed(cfg.seed, "shift/shuffle"),
            granularity=sh.get("granularity", "hourly"), policy=imputation_policy(sh.get("imputation")),
        )
    specs = sh.get("classifiers")
    specs = DEFAULT_SPECS if specs is None else tuple(ClassifierSpec.from_dict(s) for s in specs)
    with stage("classify"):
        report = run_shift_diagnostic(
            origin, specs, seed=sub_seed(cfg.seed, "shift"), train_frac=cfg.split["train_frac"],
            n_jobs=cfg.jobs,
        )
    out = _out_dir(cfg)
    with stage("write"):
        _write_json(os.path.join(out, "shift_report.json"), {**cfg.header(), **report.to_dict()})
        write_csv(
            os.path.join(out, "shift_summary.csv"), report.summary_rows(), cfg.header_lines(),
            columns=["classifier", "accuracy", "f1", "sensitivity", "specificity", "auc", "verdict"],
        )
    return report


# -- standalone imputation ------------------------------------------------------------------


def _rows_to_split(split: DatasetSplit, rows: MinuteDataset) -> DatasetSplit:
    """Write imputed minute rows back into hour instances (rows absent stay missing)."""
    pos = {h: i for i, h in enumerate(split.hour_ids)}
    values = {e.name: np.stack([h.values[e.name] for h in split.instances]).copy() for e in rows.layout}
    present = {e.name: np.stack([h.present[e.name] for h in split.instances]).copy() for e in rows.layout}
    hi = np.array([pos[h] for h in rows.hour_ids], dtype=np.int64)
    for k, e in enumerate(rows.layout):
        p = rows.present[:, k]
        values[e.name][hi[p], rows.minute_index[p]] = rows.features[p, e.offset : e.offset + e.dim]
        present[e.name][hi[p], rows.minute_index[p]] = True
    instances = []
    for i, inst in enumerate(split.instances):
        v = dict(inst.values)
        pr = dict(inst.present)
        for e in rows.layout:
            v[e.name], pr[e.name] = values[e.name][i], present[e.name][i]
        instances.append(HourInstance(inst.hour_id, inst.label, v, pr))
    return DatasetSplit(split.split_name, tuple(instances), split.manifest)


def run_impute(cfg: ExperimentConfig) -> dict[str, str]:
    """Impute minute rows of the dataset files; statistics come from the train split."""
    with stage("ingest"):
        data = load_data(cfg)
        groups = _resolve_groups(data.manifest, cfg.groups)
        policy = imputation_policy(cfg.imputation)
        if policy is None:
            raise ConfigError("standalone imputation needs method 'mean' or 'euclidean'")
        reference = explode_to_minutes(data.train, groups)
    out = _out_dir(cfg)
    paths, removed_all = {}, []
    for name in cfg.impute.get("inputs", ["train", "test"]):
        split = {"train": data.train, "test": data.test}.get(name)
        if name not in ("train", "test"):
            raise ConfigError(f"impute.inputs entries must be 'train' or 'test', got {name!r}")
        if split is None:
            continue
        with stage("impute"):
            imputed, removed = impute(reference, explode_to_minutes(split, groups), policy)
            result = _rows_to_split(split, imputed)
        removed_all.extend(removed)
        path = os.path.join(out, f"{name}_imputed.jsonl")
        with stage("write"):
            save_dataset(result, path, meta=cfg.header())
        paths[name] = path
    with stage("write"):
        paths["removed"] = os.path.join(out, "removed_rows.csv")
        write_removal_manifest(paths["removed"], removed_all, cfg.header_lines())
    return paths


# -- ROC rendering ----------------------------------------------------------------------------


def run_roc(cfg: ExperimentConfig) -> str:
    src = cfg.roc.get("input")
    if not src:
        raise ConfigError("roc needs an input ROC CSV (roc.input or --input)")
    if not os.path.exists(src):
        raise ConfigError(f"ROC CSV not found: {src}")
    with stage("ingest"):
        rows = read_csv(src)
        try:
            pts = [(float(r["fpr"]), float(r["tpr"])) for r in rows]
        except (KeyError, ValueError) as exc:
            raise DataError(f"{src}: ROC CSV needs numeric fpr and tpr columns ({exc})") from None
        if len(pts) < 2:
            raise DataError(f"{src}: ROC CSV needs at least two points")
        f = np.array([p[0] for p in pts])
        t = np.array([p[1] for p in pts])
        auc = float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))
    out = _out_dir(cfg)
    path = os.path.join(out, os.path.splitext(os.path.basename(src))[0] + ".svg")
    comment = json.dumps(cfg.header(), sort_keys=True, separators=(",", ":")).replace("--", "- -")
    with stage("write"):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"<!-- {comment} -->\n{roc_svg(pts, auc)}")
    return path


COMMANDS = {
    "generate": run_generate,
    "sweep": run_sweep,
    "pipeline": run_pipeline,
    "importance": run_importance,
    "shift": run_shift,
    "impute": run_impute,
    "roc": run_roc,
}
