"""Light-field recognition: spatial descriptions of sub-aperture views,
sequenced by selection/scanning topologies and modeled by a peephole LSTM."""

__version__ = "0.1.0"
