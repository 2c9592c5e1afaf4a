"""Self-supervised image quality representations from distortion discrimination.

Pipeline: synthesize a labeled bank of distorted images, pretrain an
encoder/projector with a mixed class/instance contrastive objective over
quality-preserving augmentations, then evaluate the frozen features with a
ridge linear probe (no-reference) or feature-difference probe (full-reference).
"""

__version__ = "0.1.0"
