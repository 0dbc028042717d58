"""Desk-scale EdgeStereo: stereo matching with a cooperating edge sub-network,
built on a small numpy reverse-mode autodiff engine."""
from .autodiff import Node, backward, grad_check, parameter, precision
from .context_pyramid import ContextPyramid, ContextPyramidConfig, scene_prior
from .data import StereoSample, generate_dataset, generate_stereogram
from .losses import EvalReport, deep_supervision, evaluate
from .model import EdgeStereo, ModelConfig
from .training import PhasePlan, PhaseSpec, run_phase, run_plan

__version__ = "0.1.0"

__all__ = [
    "ContextPyramid", "ContextPyramidConfig", "EdgeStereo", "EvalReport", "ModelConfig", "Node",
    "PhasePlan", "PhaseSpec", "StereoSample", "backward", "deep_supervision", "evaluate",
    "generate_dataset", "generate_stereogram", "grad_check", "parameter", "precision",
    "run_phase", "run_plan", "scene_prior",
]
