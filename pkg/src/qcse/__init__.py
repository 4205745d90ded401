"""Quality-controlled speech enhancement: predict the background attenuation
that brings an enhanced mixture to a target quality score."""

__version__ = "0.1.0"
