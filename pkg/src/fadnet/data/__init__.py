from .dataset import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    PreprocessConfig,
    StereoSample,
    denormalize_colors,
    load_manifest,
    load_sample,
    normalize_colors,
    random_crop_pair,
    read_manifest,
    save_sample,
    to_batch,
    write_manifest,
)
from .images import read_disparity, read_disparity_png16, read_image, write_disparity_png16, write_image
from .pfm import load_pfm, read_pfm, save_pfm, write_pfm
from .stereogram import (
    LayeredField,
    gen_random_dot_stereogram,
    generate_dataset,
    random_layered_field,
    warp_consistency_error,
)
