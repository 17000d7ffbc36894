"""Task-oriented grasping pipeline: instruction -> affordance part -> grasp."""

from ._core import (
    TaskgraspError,
    class_parts,
    default_config,
    default_intrinsics,
    depth_to_cloud,
    deproject_pixel,
    evaluate_gsr,
    format_reasoning_response,
    generate_scene,
    load_observation,
    mask_image,
    object_classes,
    parse_reasoning_response,
    project_point,
    render,
    run_pipeline,
    select_grasp,
    validate_grasp_pose,
)

__all__ = [
    "TaskgraspError",
    "class_parts",
    "default_config",
    "default_intrinsics",
    "depth_to_cloud",
    "deproject_pixel",
    "evaluate_gsr",
    "format_reasoning_response",
    "generate_scene",
    "load_observation",
    "mask_image",
    "object_classes",
    "parse_reasoning_response",
    "project_point",
    "render",
    "run_pipeline",
    "select_grasp",
    "validate_grasp_pose",
]
