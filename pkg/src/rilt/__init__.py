"""Random-walk intersection local times: counts, kernels, martingales and couplings."""
__version__ = "0.1.0"
