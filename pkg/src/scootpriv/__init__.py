"""Micromobility availability-feed analysis toolkit.

Ingests GBFS free_bike_status snapshots, reconstructs rider trips from
consecutive parked-fleet states, clusters trip endpoints into hotspots,
and applies/evaluates a geo-indistinguishable planar-Laplace location
perturbation as a defense.
"""

__version__ = "0.1.0"
