"""Export image datasets to embedding-cache directories using a
pre-trained contrastive vision-language checkpoint."""

from cacheextract.extract import (
    Encoder,
    ExtractionJob,
    build_text_classifier,
    extract_image_features,
    scan_dataset,
)
from cacheextract.templates import DEFAULT_TEMPLATES, load_templates

__version__ = "0.1.0"
