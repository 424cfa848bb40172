"""Python bindings for the relation-graph 3D detector."""

from ._core import (
    OrientedBox,
    Pipeline,
    average_precision,
    center_of_mass_loss,
    config_hash,
    config_json,
    gradcheck,
    iou_3d,
    iou_3d_monte_carlo,
    mean_average_precision,
    nms_3d,
    parameter_census,
    preset_names,
    synth_scene,
)

__all__ = [
    "OrientedBox",
    "Pipeline",
    "average_precision",
    "center_of_mass_loss",
    "config_hash",
    "config_json",
    "gradcheck",
    "iou_3d",
    "iou_3d_monte_carlo",
    "mean_average_precision",
    "nms_3d",
    "parameter_census",
    "preset_names",
    "synth_scene",
]
