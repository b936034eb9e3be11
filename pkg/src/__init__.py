# src/__init__.py
"""
trajfactors - Latent factor models of vehicle trajectories
"""

__version__ = "1.0.0"
__author__ = "trajfactors Team"
__description__ = "Joint sequence/object/time latent factors for trajectory mining and next-location prediction"
