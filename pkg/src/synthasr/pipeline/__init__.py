"""Experiment orchestration: manifests, features, synthesis, data mixing,
training schedule, decoding and reports."""
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .experiment import Experiment, StageFailure, run_experiment
from .features import FeatureConfig, featurize
from .manifest import CorpusManifest, ManifestError, Record, ingest, load_manifest
from .mixing import MixPlan, MixPolicy, build_training_mix
from .parallel import WORKERS_ENV, parallel_map, worker_count
from .report import ReportRow, from_csv, to_csv, to_table, write_report
from .synthesis import Voice, generate_synthetic

__all__ = [
    "ConfigError", "CorpusManifest", "Experiment", "ExperimentConfig", "FeatureConfig", "ManifestError",
    "MixPlan", "MixPolicy", "Record", "ReportRow", "StageFailure", "Voice", "WORKERS_ENV",
    "build_training_mix", "config_from_dict", "featurize", "from_csv", "generate_synthetic", "ingest",
    "load_config", "load_manifest", "parallel_map", "run_experiment", "to_csv", "to_table", "worker_count",
    "write_report",
]
