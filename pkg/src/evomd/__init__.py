"""Reactive MD trajectories to duration-annotated species events, forecasting datasets and baselines."""

from .errors import (ConfigError, EvomdError, FormulaError, FrameFormatError, NetworkError, StageError,
                     TrajectoryError, ValidationError)
from .species import CanonicalFormula, canonicalize, connected_components, parse_formula
from .trajectory_io import BondThreshold, Frame, ingest, parse_frames, validate_trajectory
from .events import (FilterBand, MolecularEvent, bandpass_filter, extract_events, pipeline_stats, rle_decode,
                     rle_encode, track_lineages)
from .dataset import (DurationBins, PredictionSample, balance, build_windows, format_instructions,
                      interleave_qa, split_disjoint)
from .kmc import (ReactionNetwork, bayes_optimal_accuracy, expand_to_frames, generate, random_network,
                  simulate)
from .evaluation import EvalReport, emit_report, parse_output, parse_prediction, score_task
from .pipeline import PipelineConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EvomdError",
    "FormulaError",
    "FrameFormatError",
    "NetworkError",
    "StageError",
    "TrajectoryError",
    "ValidationError",
    "CanonicalFormula",
    "canonicalize",
    "connected_components",
    "parse_formula",
    "BondThreshold",
    "Frame",
    "ingest",
    "parse_frames",
    "validate_trajectory",
    "FilterBand",
    "MolecularEvent",
    "bandpass_filter",
    "extract_events",
    "pipeline_stats",
    "rle_decode",
    "rle_encode",
    "track_lineages",
    "DurationBins",
    "PredictionSample",
    "balance",
    "build_windows",
    "format_instructions",
    "interleave_qa",
    "split_disjoint",
    "ReactionNetwork",
    "bayes_optimal_accuracy",
    "expand_to_frames",
    "generate",
    "random_network",
    "simulate",
    "EvalReport",
    "emit_report",
    "parse_output",
    "parse_prediction",
    "score_task",
    "PipelineConfig",
    "run_pipeline",
]
