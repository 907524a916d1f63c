"""Differentiable network/accelerator co-exploration at desk scale.

Modules:
    workload   - architecture space, candidate ops and their conv layers
    costmodel  - analytical latency / energy / area model of one accelerator
    costfn     - scalar hardware cost functions (linear, EDAP)
    oracle     - exhaustive optimal-hardware search and dataset generation
    nn         - small numpy autodiff core
    evaluator  - hardware-generation + cost-estimation surrogate
    cosearch   - toy supernet and gradient co-search
    cli        - command-line driver
"""

__version__ = "0.1.0"
