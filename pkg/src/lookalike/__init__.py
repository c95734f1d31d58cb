"""Audience expansion by density estimation via classification.

Pipeline: embed the user base into a low-dimensional neighborhood-preserving
map, train extremely randomized trees to separate a seed sample from
synthetic uniform negatives, and rank the pool by posterior score to form
the expanded audience.
"""

__version__ = "0.1.0"
