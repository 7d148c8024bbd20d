"""HEALPix windowed-attention toolkit: grid indexing, shift plans, fisheye
resampling, spherical metrics, synthetic scenes and the trainable model."""

try:
    from ._healswin import *  # noqa: F401,F403  (installed package layout)
    from ._healswin import __doc__ as _core_doc  # noqa: F401
except ImportError:  # extension on sys.path, e.g. straight from the build tree
    from _healswin import *  # noqa: F401,F403
    from _healswin import __doc__ as _core_doc  # noqa: F401

__all__ = [
    "Model",
    "ang_to_pix",
    "chamfer",
    "child_range",
    "class_weights",
    "generate_sample",
    "layer_chain",
    "local_xy",
    "miou",
    "nest_to_ring",
    "npix",
    "pix_to_ang",
    "rel_pos_index",
    "resample_to_healpix",
    "resample_to_raster",
    "ring_to_nest",
    "shift_plan",
    "train",
]
