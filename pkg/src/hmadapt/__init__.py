"""Cross-domain histogram matching and small-scale model adaptation for grayscale patches."""

__version__ = "0.1.0"
