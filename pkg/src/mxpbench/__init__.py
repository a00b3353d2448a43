"""Mixed-precision multigrid GMRES benchmark on a 27-point stencil system.

The pipeline: generate a synthetic 27-point-stencil problem over a
rank-decomposed structured grid, solve it with double-precision GMRES
and with mixed double/single GMRES-IR — both preconditioned by a
geometric multigrid V-cycle with multicolor Gauss-Seidel smoothing —
and report penalized mixed-precision throughput.
"""

__version__ = "0.1.0"

from .bench import BenchConfig, main, run_benchmark, run_validation

__all__ = ["BenchConfig", "main", "run_benchmark", "run_validation",
           "__version__"]
