"""Python access to the rhythm core: synthetic clips, model forward, losses and signal tools.

Arrays are numpy float64. Clips are planar [3, T, H, W] in [0, 255].
"""

from ._core import (
    band_psd,
    bandpass,
    default_config,
    estimate_hr,
    forward,
    green,
    hr_metrics,
    loss,
    loss_gradients,
    make_region_grid,
    pos,
    summary,
    synth_clip,
    topk_route,
    welch,
)

__all__ = [
    "band_psd",
    "bandpass",
    "default_config",
    "estimate_hr",
    "forward",
    "green",
    "hr_metrics",
    "loss",
    "loss_gradients",
    "make_region_grid",
    "pos",
    "summary",
    "synth_clip",
    "topk_route",
    "welch",
]
