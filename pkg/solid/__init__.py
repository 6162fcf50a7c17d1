"""SOLiD: spatially organized LiDAR descriptors for place recognition under a restricted field of view."""

__version__ = "1.0.0"
