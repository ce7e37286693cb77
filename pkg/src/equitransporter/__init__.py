"""Rotation-equivariant pick-and-place on a planar desk-scale simulator."""
from .fields import FeatureField, FormatError, Kernel, LiftedStack, correlate, crop, lift, rotate_grid
from .groups import GroupElement, Representation, element, quotient, regular, rep_matrix, standard, trivial
from .nn import AdamState, GConv, Network, angle_net, unet
from .ravens import Demonstration, EvalResult, Scene, dataset_read, dataset_write, evaluate, generate, oracle
from .training import RunConfig, evaluate_policy, make_demos, split_seeds, train
from .transporter import (ModelConfig, PickAction, PickMaps, PlaceAction, PlaceMap, TransporterAgent, decode,
                          place_baseline, place_equivariant)

__all__ = [
    "AdamState", "Demonstration", "EvalResult", "FeatureField", "FormatError", "GConv", "GroupElement",
    "Kernel", "LiftedStack", "ModelConfig", "Network", "PickAction", "PickMaps", "PlaceAction", "PlaceMap",
    "Representation", "RunConfig", "Scene", "TransporterAgent", "angle_net", "correlate", "crop",
    "dataset_read", "dataset_write", "decode", "element", "evaluate", "evaluate_policy", "generate", "lift",
    "make_demos", "oracle", "place_baseline", "place_equivariant", "quotient", "regular", "rep_matrix",
    "rotate_grid", "split_seeds", "standard", "train", "trivial", "unet",
]
