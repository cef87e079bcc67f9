"""Classical vision primitives shared by every pipeline stage."""

from .filters import (
    bilinear_resize_horizontal,
    edge_detect,
    gaussian_smooth,
    grayscale,
    resize_scale,
    sobel,
)
from .geometry import Affine2D, RansacResult, apply_affine, estimate_affine_ransac, fit_affine_lstsq
from .hough import (
    Circle,
    HoughLine,
    average_similar_lines,
    hough_circles,
    hough_lines,
    intersect,
    line_intersections,
    select_dish_circle,
)
from .rowstats import row_median, row_quantile
from .segment import (
    Regions,
    binarize,
    connected_components,
    largest_components,
    otsu_from_histogram,
    otsu_threshold,
)

__all__ = [
    "Affine2D",
    "Circle",
    "HoughLine",
    "RansacResult",
    "Regions",
    "apply_affine",
    "average_similar_lines",
    "bilinear_resize_horizontal",
    "binarize",
    "connected_components",
    "edge_detect",
    "estimate_affine_ransac",
    "fit_affine_lstsq",
    "gaussian_smooth",
    "grayscale",
    "hough_circles",
    "hough_lines",
    "intersect",
    "largest_components",
    "line_intersections",
    "otsu_from_histogram",
    "otsu_threshold",
    "resize_scale",
    "row_median",
    "row_quantile",
    "select_dish_circle",
    "sobel",
]
