"""Text-guided hybrid-query connector for multimodal item-to-item retrieval."""

__version__ = "0.1.0"
