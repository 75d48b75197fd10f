"""Annotation-preserving pseudo-domain augmentation for single-domain generalization.

Submodules:

- :mod:`~pseudodomain.dataset`: annotated images, canonical JSON, toy scenes
- :mod:`~pseudodomain.prompts`: tag-based scene prompts and object-level prompts
- :mod:`~pseudodomain.generation`: pseudo-domain generation behind a generator interface
- :mod:`~pseudodomain.filtering`: RBF-kernel object filter
- :mod:`~pseudodomain.csn`: cross-style normalization and covariance matching loss
- :mod:`~pseudodomain.metrics`: IoU, AP, mAP, mPC, MMD^2
- :mod:`~pseudodomain.pipeline`: file-based orchestration used by the CLI
"""

from .csn import (
    CsnPolicy,
    channel_stats,
    cml_loss,
    cross_style_swap,
    finite_diff_check,
    gram,
    instance_norm,
    sample_active_layers,
    toy_backbone_forward,
)
from .dataset import (
    Annotation,
    BoundingBox,
    DomainDataset,
    ImageRaster,
    LabeledImage,
    crop,
    load_dataset,
    merge_datasets,
    save_dataset,
    synth_toy_dataset,
)
from .errors import ContractViolation, DatasetFormatError, GenerationError, ValidationError
from .filtering import FilterConfig, StubEmbedder, embed_region, filter_boxes, rbf_similarity
from .generation import (
    TARGET_DOMAINS,
    GeneratorConfig,
    StyleDomainSpec,
    generate_image,
    generate_pseudo_domain,
    procedural_stylize,
)
from .metrics import Detection, average_precision, iou, mean_ap, mmd2, mpc
from .prompts import (
    DescriptorSets,
    StubTagger,
    TagSet,
    augment_tags,
    decode_prompt,
    default_descriptor_sets,
    extract_tags,
    gen_instance_prompt,
)

__version__ = "0.1.0"
