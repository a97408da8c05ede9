"""Out-of-distribution robustness sweeps for multimodal self-supervised 3D MRI encoders."""
from importlib import metadata

try:
    __version__ = metadata.version("mmssl")
except metadata.PackageNotFoundError:
    __version__ = "0.0.0"
