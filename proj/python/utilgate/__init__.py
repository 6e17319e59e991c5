"""Calibrated logit perturbation: perturb, measure, fit, solve, tier."""

from ._utilgate import (
    Error,
    FitError,
    FormatError,
    InvalidArgument,
    ShapeError,
    apply_tier,
    argmax_classes,
    calibrate,
    decode_tensor,
    default_sigma_grid,
    encode_tensor,
    evaluate,
    fit,
    gen_blobs,
    gen_scene,
    load_tensor,
    make_mask,
    make_policy,
    margin_saliency,
    normalize_importance,
    perturb,
    predict,
    resolve_tier,
    save_tensor,
    seed_for,
    solve_sigma,
)

__all__ = [name for name in dir() if not name.startswith("_")]
