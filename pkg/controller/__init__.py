# controller/__init__.py

from . import closed_loop, mpc
