"""Joint speech/text multi-task sequence-to-sequence training at desk scale."""

__version__ = "0.1.0"
