"""CTC acoustic modeling, WFST decoding, and transformer spelling
correction, end to end on a synthetic homophone language."""

__version__ = "0.1.0"
