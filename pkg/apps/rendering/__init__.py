from .rasterizer import FrameBuffer, RenderOptions, composite_pixel, render, sort_and_bin
from .backward import (
    ParamGrads,
    composite_backward,
    dT2D_dh,
    dT2D_dnu,
    projection_backward,
    render_backward,
)

__all__ = [
    "FrameBuffer",
    "RenderOptions",
    "composite_pixel",
    "render",
    "sort_and_bin",
    "ParamGrads",
    "composite_backward",
    "dT2D_dh",
    "dT2D_dnu",
    "projection_backward",
    "render_backward",
]
