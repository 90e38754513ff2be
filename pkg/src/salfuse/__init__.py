"""Salient object detection by fusing deep and boundary-connectivity saliency."""

__version__ = "0.1.0"

from .bench import DatasetManifest, EvalReport, evaluate_dataset, mae, pr_points, run_pipeline
from .fusion import FusionParams, TrainConfig, fuse_forward, train
from .image_core import (
    Colorspace,
    Image,
    Provenance,
    SaliencyMap,
    load_image,
    resize_bilinear,
    rgb_to_lab,
    save_gray,
)
from .mssf import ScaleSet, mssf_refine, superpixel_median_map
from .rbd import connectivity_stats, geodesic_distances, rbd_map
from .superpixel import boundary_superpixels, build_graph, slic
