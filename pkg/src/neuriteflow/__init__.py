"""Learned surrogate for material transport in neurite networks.

Pipeline: SWC morphology -> skeleton -> pipe/bifurcation units ->
computation graphs -> reference transport solver (training data) ->
GN-block unit simulators + interface assembly -> network-wide prediction.
"""

__version__ = "0.1.0"
