"""attcmi: frequency-diverse computational microwave imaging simulator and
attention-gated multi-task reconstruction GAN."""

__version__ = "0.1.0"
