# gp/__init__.py
# Kernel families and posterior inference for the reference GP.

from . import kernels, posterior
