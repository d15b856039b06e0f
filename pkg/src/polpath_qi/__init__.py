"""Quantum illumination with polarization-path entangled single photons.

``qcore``     4x4 density-matrix algebra on polarization (x) path
``protocol``  loss, receivers, CHSH, noise channels, angle optimizer
``photonsim`` heralded five-detector Monte Carlo and coincidence counting
``qicli``     sweeps, audit, CSV/JSON output and the ``qicli`` command
"""

__version__ = "0.1.0"
