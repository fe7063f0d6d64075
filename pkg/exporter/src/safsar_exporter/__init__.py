"""Feature exporter: runs video and text backbones over a directory of video
files and writes a binary feature cache in the safsar wire format."""

__version__ = "0.1.0"
