# training/__init__.py

from . import asymptotic, hyperopt, periodic
