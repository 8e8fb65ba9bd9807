"""Staged batch pipeline: registry -> features -> selection -> windows -> models -> reports.

Every stage reads the artifacts of the previous one from the output
directory, so stages can be run one at a time or chained by :func:`run_pipeline`.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .evaluation import (FEATURE_SETS, AblationReport, drift_report, emit_roc_csv, fit_cells,
                         prepare_feature_sets, score_cells)
from .features import AfeGrammar, FeatureConfig, FeatureMatrix, sanitize_matrix
from .models import FAMILIES, ConfigError, ModelConfig, load_model, save_model
from .registry import (Registry, RegistryError, filter_registry, load_registry,
                       validate_registry, write_registry)
from .selection import IvReport, select_features
from .synth import CovidRegime, SynthConfig, generate_registry
from .windows import (POST_COVID_YEARS, PRE_COVID_YEARS, TRAIN_YEARS, WINDOW_LENGTHS, SampleSet,
                      SplitBundle, assemble_splits, build_all_samples)

log = logging.getLogger("bankruptlab")

STAGES = ("synth", "ingest", "featurize", "select", "windows", "train", "evaluate")

DEFAULT_CONFIG: dict[str, Any] = {
    "input": {"registry_dir": None},
    "synth": {"n_companies": 10000, "seed": 0, "start_year": 2010, "end_year": 2022,
              "covid": True, "hazard_multiplier": 0.3, "delay_probability": 0.5},
    "ingest": {"excluded_sectors": [], "drop_anomalous": True},
    "features": {"fr": True, "afe": True, "rb": True, "afe_max_features": 200,
                 "trend": "difference"},
    "selection": {"n_bins": 10, "iv_threshold": 0.02, "missing_threshold": 0.7,
                  "smoothing": 0.5},
    "windows": {"lengths": [1, 2, 3], "split_fraction": 0.7, "split_seed": 0},
    "models": {"families": ["logistic", "random_forest", "gbdt", "mlp"], "seeds": [0],
               "undersample_rate": 0.25, "folds": 5,
               "grids": {"logistic": {"l2": [0.1, 1.0, 10.0]},
                         "random_forest": {"max_depth": [6, 12], "min_leaf": [5, 20]},
                         "gbdt": {"learning_rate": [0.05, 0.1], "max_leaves": [15, 31]},
                         "mlp": {"learning_rate": [1e-5, 1e-3]}},
               "params": {"logistic": {}, "random_forest": {}, "gbdt": {}, "mlp": {}}},
    "evaluate": {"feature_sets": ["FR", "AFE", "FR+RB", "AFE+RB"]},
    "output": {"dir": "out"},
}

# keys whose values are free-form mappings rather than fixed schemas
_OPEN_KEYS = {"models.grids", "models.params"}

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class DataError(ValueError):
    """Input data unusable by a stage."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, code: int):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage, self.cause, self.code = stage, cause, code


# ---------------------------------------------------------------------------
# configuration


def _is_open(dotted: str) -> bool:
    return any(dotted.startswith(o + ".") for o in _OPEN_KEYS)


def _merge(base: dict, override: Mapping, prefix: str = "") -> dict:
    """``base`` updated by ``override``; unknown keys are rejected outside open sections.

    A family entry under ``models.grids`` replaces the default grid wholesale.
    """
    out = copy.deepcopy(base)
    for k, v in override.items():
        dotted = f"{prefix}{k}"
        if k not in base and not _is_open(dotted):
            raise ConfigError(f"unknown config key {dotted!r}")
        if k in base and isinstance(base[k], dict) and not dotted.startswith("models.grids."):
            if not isinstance(v, Mapping):
                raise ConfigError(f"config key {dotted!r} must be a mapping")
            out[k] = _merge(base[k], v, dotted + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(cfg: dict, dotted: str, raw: str) -> None:
    """Apply a ``--a.b.c value`` override; the value is parsed as YAML."""
    parts = dotted.split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {dotted}: {exc}") from None
    node = cfg
    for i, p in enumerate(parts[:-1]):
        path = ".".join(parts[:i + 1])
        if p not in node:
            if _is_open(path):
                node[p] = {}
            else:
                raise ConfigError(f"unknown config key {dotted!r}")
        if not isinstance(node[p], dict):
            raise ConfigError(f"config key {path!r} is not a section")
        node = node[p]
    if parts[-1] not in node and not _is_open(dotted):
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


@dataclass(frozen=True)
class PipelineConfig:
    data: Mapping[str, Any]
    base_dir: Path = Path(".")

    @classmethod
    def from_mapping(cls, override: Optional[Mapping] = None, base_dir=".") -> "PipelineConfig":
        cfg = cls(_merge(DEFAULT_CONFIG, override or {}), Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides: Sequence[tuple[str, str]] = ()) -> "PipelineConfig":
        raw: dict = {}
        base = Path(".")
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            try:
                raw = yaml.safe_load(text) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"invalid YAML in {path}: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError("config file must hold a mapping at top level")
            base = Path(path).resolve().parent
        data = _merge(DEFAULT_CONFIG, raw)
        for dotted, value in overrides:
            set_dotted(data, dotted, value)
        cfg = cls(data, base)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def get(self, dotted: str):
        node = self.data
        for p in dotted.split("."):
            node = node[p]
        return node

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        d = self.data
        f = d["features"]
        if not (f["fr"] or f["afe"] or f["rb"]):
            raise ConfigError("at least one feature family (fr, afe, rb) must be enabled")
        if f["trend"] not in ("difference", "slope"):
            raise ConfigError("features.trend must be 'difference' or 'slope'")
        ws = d["windows"]["lengths"]
        if not ws or any(w not in WINDOW_LENGTHS for w in ws):
            raise ConfigError(f"windows.lengths must be a non-empty subset of {WINDOW_LENGTHS}")
        fams = d["models"]["families"]
        if not fams or any(m not in FAMILIES for m in fams):
            raise ConfigError(f"models.families must be a non-empty subset of {FAMILIES}")
        for fam in d["models"]["grids"]:
            if fam not in FAMILIES:
                raise ConfigError(f"models.grids names unknown family {fam!r}")
        for fam in fams:
            params = d["models"]["params"].get(fam) or {}
            grid = d["models"]["grids"].get(fam) or {}
            for cell_key, values in grid.items():
                if not isinstance(values, list) or not values:
                    raise ConfigError(f"models.grids.{fam}.{cell_key} must be a non-empty list")
                for v in values:
                    ModelConfig(fam, {**params, cell_key: v})
            ModelConfig(fam, params)
        for fs in d["evaluate"]["feature_sets"]:
            if fs not in FEATURE_SETS:
                raise ConfigError(f"unknown feature set {fs!r}")
        if not 0 < d["windows"]["split_fraction"] < 1:
            raise ConfigError("windows.split_fraction must be in (0, 1)")
        rate = d["models"]["undersample_rate"]
        if rate is not None and not 0 < rate < 1:
            raise ConfigError("models.undersample_rate must be in (0, 1) or null")
        if d["input"]["registry_dir"] is not None:
            p = self.resolve(d["input"]["registry_dir"])
            if not p.is_dir():
                raise ConfigError(f"input.registry_dir {p} is not a directory")
        try:
            self.feature_config()
            self.synth_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.data["output"]["dir"])

    def feature_config(self) -> FeatureConfig:
        f = self.data["features"]
        return FeatureConfig(fr=bool(f["fr"]), afe=bool(f["afe"]), rb=bool(f["rb"]),
                             grammar=AfeGrammar(max_features=int(f["afe_max_features"])),
                             trend=f["trend"])

    def synth_config(self) -> SynthConfig:
        s = self.data["synth"]
        regime = CovidRegime(hazard_multiplier=float(s["hazard_multiplier"]),
                             delay_probability=float(s["delay_probability"])) \
            if s["covid"] else None
        return SynthConfig(n_companies=int(s["n_companies"]), start_year=int(s["start_year"]),
                           end_year=int(s["end_year"]), covid_regime=regime)

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


# ---------------------------------------------------------------------------
# artifact layout


class Layout:
    def __init__(self, root: Path):
        self.root = root

    synth_dir = property(lambda self: self.root / "registry")
    ingest_dir = property(lambda self: self.root / "ingest")
    clean_dir = property(lambda self: self.root / "ingest" / "registry")
    validation = property(lambda self: self.root / "ingest" / "validation_report.csv")
    features_dir = property(lambda self: self.root / "features")
    selection_dir = property(lambda self: self.root / "selection")
    windows_dir = property(lambda self: self.root / "windows")
    models_dir = property(lambda self: self.root / "models")
    reports_dir = property(lambda self: self.root / "reports")
    roc_dir = property(lambda self: self.root / "reports" / "roc")
    manifest = property(lambda self: self.root / "run_manifest.json")
    incomplete = property(lambda self: self.root / ".incomplete")
    lock = property(lambda self: self.root / ".lock")

    def features(self, w):
        return self.features_dir / f"features_{w}y.csv"

    def iv_report(self, w):
        return self.selection_dir / f"iv_report_{w}y.csv"

    def split(self, w, name):
        return self.windows_dir / f"{w}y" / f"{name}.csv"

    def split_manifest(self, w):
        return self.windows_dir / f"manifest_{w}y.json"

    def model(self, family, fs, w, seed):
        return self.models_dir / f"{family}_{fs}_{w}y_seed{seed}.json"


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _require(path: Path, stage: str):
    if not path.exists():
        raise DataError(f"missing input {path}; run the {stage} stage first")


# ---------------------------------------------------------------------------
# stages


def stage_synth(cfg: PipelineConfig, lay: Layout) -> None:
    reg, _ = generate_registry(cfg.synth_config(), seed=int(cfg["synth"]["seed"]))
    write_registry(reg, lay.synth_dir)
    log.info("synth: %d companies written", len(reg.companies))


def _source_dir(cfg: PipelineConfig, lay: Layout) -> Path:
    src = cfg["input"]["registry_dir"]
    return cfg.resolve(src) if src is not None else lay.synth_dir


def stage_ingest(cfg: PipelineConfig, lay: Layout) -> None:
    src = _source_dir(cfg, lay)
    _require(src, "synth")
    reg = load_registry(src)
    report = validate_registry(reg)
    _write_text(lay.validation, report.to_csv_text())
    clean = filter_registry(reg, cfg["ingest"]["excluded_sectors"],
                            bool(cfg["ingest"]["drop_anomalous"]))
    write_registry(clean, lay.clean_dir)
    log.info("ingest: %d anomalies, %d of %d companies kept", len(report),
             len(clean.companies), len(reg.companies))


def _sample_years(reg: Registry) -> list[int]:
    years = sorted(set(TRAIN_YEARS) | set(PRE_COVID_YEARS) | set(POST_COVID_YEARS))
    horizon = reg.horizon_year
    if horizon is None or horizon < max(years) + 1:
        raise DataError(f"registry ends in {horizon}; labels for reference year {max(years)} "
                        f"need records through {max(years) + 1}")
    return years


def stage_featurize(cfg: PipelineConfig, lay: Layout) -> None:
    _require(lay.clean_dir, "ingest")
    reg = load_registry(lay.clean_dir)
    years = _sample_years(reg)
    fc = cfg.feature_config()
    for w in cfg["windows"]["lengths"]:
        sets = build_all_samples(reg, w, years, fc)
        m = sanitize_matrix(FeatureMatrix.concat([s.matrix for s in sets]))
        lay.features_dir.mkdir(parents=True, exist_ok=True)
        m.to_csv(lay.features(w))
        log.info("featurize: W=%d %d samples x %d features", w, len(m), m.n_features)


def _load_features(lay: Layout, w: int) -> FeatureMatrix:
    _require(lay.features(w), "featurize")
    return FeatureMatrix.from_csv(lay.features(w))


def stage_select(cfg: PipelineConfig, lay: Layout) -> None:
    s = cfg["selection"]
    for w in cfg["windows"]["lengths"]:
        m = _load_features(lay, w)
        pool = m.take(np.flatnonzero(np.isin(m.reference_years, TRAIN_YEARS)))
        report = select_features(pool, n_bins=int(s["n_bins"]),
                                 iv_threshold=float(s["iv_threshold"]),
                                 missing_threshold=float(s["missing_threshold"]),
                                 smoothing=float(s["smoothing"]))
        _write_text(lay.iv_report(w), report.to_csv_text())
        log.info("select: W=%d %d of %d features kept", w, len(report.selected), len(report))


def _selected(cfg: PipelineConfig, lay: Layout, w: int) -> list[str]:
    _require(lay.iv_report(w), "select")
    s = cfg["selection"]
    rep = IvReport.from_csv_text(lay.iv_report(w).read_text(encoding="utf-8"),
                                 float(s["iv_threshold"]), float(s["missing_threshold"]))
    return rep.selected


def stage_windows(cfg: PipelineConfig, lay: Layout) -> None:
    wcfg = cfg["windows"]
    for w in wcfg["lengths"]:
        m = _load_features(lay, w)
        cols = [c for c in m.columns if c in set(_selected(cfg, lay, w))]
        if not cols:
            raise DataError(f"no feature passed selection for the {w}-year window")
        m = m.select(cols)
        sets = [SampleSet(w, int(y), m.take(np.flatnonzero(m.reference_years == y)))
                for y in sorted(set(m.reference_years.tolist()))]
        bundle = assemble_splits(sets, float(wcfg["split_fraction"]), int(wcfg["split_seed"]))
        for name in SplitBundle.SPLITS:
            lay.split(w, name).parent.mkdir(parents=True, exist_ok=True)
            bundle.split(name).to_csv(lay.split(w, name))
        _write_text(lay.split_manifest(w), json.dumps(bundle.manifest(), indent=1,
                                                      sort_keys=True))
        log.info("windows: W=%d train %d, test %d, pre %d, post %d", w, len(bundle.train),
                 len(bundle.test), len(bundle.pre_covid), len(bundle.post_covid))


def _load_bundle(cfg: PipelineConfig, lay: Layout, w: int) -> SplitBundle:
    parts = {}
    for name in SplitBundle.SPLITS:
        _require(lay.split(w, name), "windows")
        parts[name] = FeatureMatrix.from_csv(lay.split(w, name))
    return SplitBundle(w, seed=int(cfg["windows"]["split_seed"]),
                       split_fraction=float(cfg["windows"]["split_fraction"]), **parts)


def _feature_sets(cfg: PipelineConfig, bundle: SplitBundle) -> list[str]:
    """Configured feature sets whose families all have selected columns."""
    present = set(bundle.train.families)
    out = []
    for fs in cfg["evaluate"]["feature_sets"]:
        if all(f in present for f in FEATURE_SETS[fs]):
            out.append(fs)
        else:
            log.warning("feature set %s skipped for W=%d: no selected columns for %s", fs,
                        bundle.window_length,
                        [f for f in FEATURE_SETS[fs] if f not in present])
    return out


def _per_window(cfg: PipelineConfig, lay: Layout):
    per_window = {}
    for w in cfg["windows"]["lengths"]:
        b = _load_bundle(cfg, lay, w)
        sets = _feature_sets(cfg, b)
        if sets:
            per_window.update(prepare_feature_sets({w: b}, sets))
    if not per_window:
        raise DataError("no feature set can be evaluated")
    return per_window


def stage_train(cfg: PipelineConfig, lay: Layout) -> None:
    mc = cfg["models"]
    per_window = _per_window(cfg, lay)
    models = fit_cells(per_window, mc["families"], [int(s) for s in mc["seeds"]],
                       grids={f: mc["grids"].get(f) or {} for f in mc["families"]},
                       base_params={f: mc["params"].get(f) or {} for f in mc["families"]},
                       target_rate=mc["undersample_rate"], folds=int(mc["folds"]))
    lay.models_dir.mkdir(parents=True, exist_ok=True)
    for (fam, fs, w, seed), model in models.items():
        save_model(model, lay.model(fam, fs, w, seed))


def stage_evaluate(cfg: PipelineConfig, lay: Layout) -> AblationReport:
    mc = cfg["models"]
    per_window = _per_window(cfg, lay)
    models = {}
    for w, sets in per_window.items():
        for fam in mc["families"]:
            for fs in sets:
                for seed in mc["seeds"]:
                    path = lay.model(fam, fs, w, int(seed))
                    _require(path, "train")
                    models[(fam, fs, w, int(seed))] = load_model(path)
    report = score_cells(models, per_window)
    lay.reports_dir.mkdir(parents=True, exist_ok=True)
    _write_text(lay.reports_dir / "auc_matrix.csv", report.to_csv_text())
    _write_text(lay.reports_dir / "auc_matrix.json", report.to_json_text())
    _write_text(lay.reports_dir / "drift_report.csv", drift_report(report).to_csv_text())
    emit_roc_csv(report, lay.roc_dir)
    return report


STAGE_FUNCS = {
    "synth": stage_synth, "ingest": stage_ingest, "featurize": stage_featurize,
    "select": stage_select, "windows": stage_windows, "train": stage_train,
    "evaluate": stage_evaluate,
}


def stages_for(command: str, cfg: PipelineConfig) -> list[str]:
    if command == "run":
        stages = list(STAGES)
        if cfg["input"]["registry_dir"] is not None:
            stages.remove("synth")
        return stages
    if command == "ablate":
        return ["train", "evaluate"]
    if command not in STAGE_FUNCS:
        raise ConfigError(f"unknown command {command!r}")
    return [command]


# ---------------------------------------------------------------------------
# run bookkeeping


def _error_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, RegistryError, OSError, ValueError)):
        return EXIT_DATA
    return EXIT_RUNTIME


def _tree_digest(root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in {".lock", ".incomplete", "run_manifest.json"}:
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def _versions() -> dict[str, str]:
    import pandas
    import scipy
    return {"bankruptlab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "pandas": pandas.__version__, "scipy": scipy.__version__,
            "pyyaml": yaml.__version__}


def write_manifest(cfg: PipelineConfig, lay: Layout, command: str, stages: Sequence[str]):
    doc = {
        "command": command,
        "stages": list(stages),
        "config": cfg.data,
        "config_sha256": cfg.digest(),
        "seeds": {"synth": cfg["synth"]["seed"], "split": cfg["windows"]["split_seed"],
                  "models": cfg["models"]["seeds"]},
        "versions": _versions(),
        "artifacts": _tree_digest(lay.root),
    }
    _write_text(lay.manifest, json.dumps(doc, indent=1, sort_keys=True) + "\n")


class OutputLock:
    """Exclusive marker file preventing two runs from sharing an output directory."""

    def __init__(self, path: Path):
        self.path = path
        self.fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"output directory is locked by another run ({self.path}); "
                               "remove the file if no run is active") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        self.path.unlink(missing_ok=True)
        return False


def run_stages(cfg: PipelineConfig, command: str = "run") -> int:
    """Execute the stages of ``command``; returns the process exit code.

    Failures are logged with the stage name, leave an ``.incomplete`` marker
    and map to 2 (config), 3 (data) or 4 (runtime/numeric).
    """
    lay = Layout(cfg.output_dir)
    try:
        stages = stages_for(command, cfg)
    except ConfigError as exc:
        log.error("[config] %s", exc)
        return EXIT_CONFIG
    try:
        lock = OutputLock(lay.lock)
        lock.__enter__()
    except (RuntimeError, OSError) as exc:
        log.error("[lock] %s", exc)
        return EXIT_RUNTIME
    try:
        _write_text(lay.incomplete, "")
        for stage in stages:
            log.info("[%s] start", stage)
            try:
                with np.errstate(over="ignore", under="ignore"):
                    STAGE_FUNCS[stage](cfg, lay)
            except Exception as exc:  # noqa: BLE001 - mapped to exit codes
                err = StageError(stage, exc, _error_code(exc))
                log.error("%s", err)
                return err.code
        write_manifest(cfg, lay, command, stages)
        lay.incomplete.unlink(missing_ok=True)
        return EXIT_OK
    finally:
        lock.__exit__(None, None, None)


def run_pipeline(config: PipelineConfig | Mapping | None = None) -> int:
    if not isinstance(config, PipelineConfig):
        config = PipelineConfig.from_mapping(config or {})
    return run_stages(config, "run")
