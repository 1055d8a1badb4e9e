"""InSyn: interaction-aware, goal-driven pedestrian trajectory prediction."""
from .estimators import InSynPredictor, InteractionScaler
from .evaluation import MetricReport, PredictionSet, ade, best_of_k, fde, ide
from .interaction import InteractionState, Region, extract_walking_states, region_of
from .model import Ablation, InSyn, ModelConfig
from .preprocess import SampleWindow, window_scene
from .scene import Scene, build_scene, parse_dataset, read_scene, write_scene

__version__ = "0.1.0"

__all__ = [
    "Ablation", "InSyn", "InSynPredictor", "InteractionScaler", "InteractionState", "MetricReport",
    "ModelConfig", "PredictionSet", "Region", "SampleWindow", "Scene", "ade", "best_of_k",
    "build_scene", "extract_walking_states", "fde", "ide", "parse_dataset", "read_scene",
    "region_of", "window_scene", "write_scene",
]
