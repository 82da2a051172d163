"""Desk-scale laboratory for golden-angle radial interventional MRI reconstruction.

Subpackages:

- :mod:`imrilab.kspace` -- radial trajectories and the exact non-uniform DFT
- :mod:`imrilab.simdata` -- synthetic interventional sequences and datasets
- :mod:`imrilab.autodiff` -- minimal reverse-mode differentiation engine
- :mod:`imrilab.network` -- the conv-LSTM recurrent reconstructor (ConvLR)
- :mod:`imrilab.training` -- losses, discriminator, adversarial training loop
- :mod:`imrilab.baseline` -- GRASP-style proximal-gradient reconstruction
- :mod:`imrilab.metrics` -- SSIM / PSNR / NMSE and report aggregation
- :mod:`imrilab.cli` -- the ``imrilab`` command-line entry point
"""

__version__ = "0.1.0"

from . import autodiff, baseline, kspace, metrics, network, simdata, training  # noqa: F401
