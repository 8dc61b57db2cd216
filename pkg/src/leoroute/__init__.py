"""LEO constellation routing testbed.

Generates Walker constellation topology snapshots, trains a graph-convolution
model that regresses per-node hop distances to a destination, routes packets
by greedy descent on the predicted distance field, and benchmarks the result
against per-hop recomputation (TBR), source routing (TSR), and contact-plan
routing (CGR) under random link interruptions.
"""
__version__ = "0.1.0"
