# checks/__init__.py
# Reachability and trackability checks for the scalar linear system.

from . import reachability
