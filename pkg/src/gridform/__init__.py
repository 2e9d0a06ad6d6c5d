"""
Curve learning and grid-shell form finding.

Modules
-------
geom
    NURBS curves and surfaces, lofting, grid extraction.
data
    Curve sampling into sequence datasets, folds and scaling.
seqnet
    Numpy Transformer encoder for per-point curve properties.
frame
    Linear-elastic 3D frame analysis of beam grids.
evo
    NSGA-II multi-objective optimizer.
formfinding
    Lofted grid-shell design problem built on the modules above.
cli
    Staged command line pipeline.
"""
__version__ = "0.1.0"
