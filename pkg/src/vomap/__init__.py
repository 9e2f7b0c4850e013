"""Virtual obstacle maps with multiple knife-edge diffraction for radio-map learning."""

__version__ = "0.1.0"
