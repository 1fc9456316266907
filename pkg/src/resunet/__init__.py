"""2D residual U-Net toolkit for multi-modal brain tumour segmentation."""

__version__ = "0.1.0"
