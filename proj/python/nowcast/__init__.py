"""Radar nowcasting: ConvLSTM encoder-forecaster, baselines, metrics and experiment commands."""

from ._core import (
    ConfigError,
    FormatError,
    ModelConfig,
    ModelParams,
    NumericError,
    estimate_flow,
    evaluate_run,
    f1_at_threshold,
    forward,
    gen_synthetic_sequence,
    gray_level,
    init_params,
    load_params,
    mae,
    ms_ssim,
    optical_flow_forecast,
    parameter_manifest,
    persistence_forecast,
    psnr,
    read_sequence,
    resolve_config,
    run_command,
    save_params,
    write_sequence,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "ModelConfig",
    "ModelParams",
    "NumericError",
    "estimate_flow",
    "evaluate_run",
    "f1_at_threshold",
    "forward",
    "gen_synthetic_sequence",
    "gray_level",
    "init_params",
    "load_params",
    "mae",
    "ms_ssim",
    "optical_flow_forecast",
    "parameter_manifest",
    "persistence_forecast",
    "psnr",
    "read_sequence",
    "resolve_config",
    "run_command",
    "save_params",
    "write_sequence",
]
