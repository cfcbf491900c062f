"""Multi-channel differential ASR for wearer speech on smart glasses."""

__version__ = "0.1.0"
