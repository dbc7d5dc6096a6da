# utils/__init__.py

# Configuration, CSV input/output, data generation and report writing for main.py.
