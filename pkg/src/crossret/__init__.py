"""Walk-forward cross-sectional stock return prediction with MLP, random forest and SVR models."""

from .panel import FactorPanel, MonthId, load_panel, validate_panel, write_panel
from .pipeline import EnsembleSpec, MlpSpec, WalkForwardConfig, run_experiment, walk_forward
from .synth import SynthConfig, generate_panel

__version__ = "0.1.0"

__all__ = [
    "EnsembleSpec", "FactorPanel", "MlpSpec", "MonthId", "SynthConfig", "WalkForwardConfig",
    "generate_panel", "load_panel", "run_experiment", "validate_panel", "walk_forward",
    "write_panel",
]
