"""pcgkit: phonocardiogram classification toolkit.

Subsystems: waveform DSP primitives, heart-cycle segmentation, a small
autodiff engine with 1D-CNN / GRU layers, a learnable FIR (time-convolution)
front-end, transfer-learning CNN training, sequence autoencoder features,
segment-level acoustic features, shallow classifiers, and ensembles.
"""

__version__ = "0.1.0"
