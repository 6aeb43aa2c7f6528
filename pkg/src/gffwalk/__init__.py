"""Level-set percolation of the Gaussian free field on regular trees:
cluster and random-walk simulation, renewal analysis and the spectral
quantities of the intergenerational operators."""

__version__ = "0.1.0"
