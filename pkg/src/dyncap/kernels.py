"""Assembly kernel backend selection.

The compiled extension is preferred when importable; otherwise the NumPy
fallback is used.  Setting the environment variable ``DYNCAP_PURE_PYTHON``
(to any nonempty value) forces the fallback, which is how the benchmark
script compares the two.  Both backends implement identical contracts and
agree to floating-point roundoff (summation order differs).
"""

import os

if os.environ.get("DYNCAP_PURE_PYTHON"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

mass_scatter = _impl.mass_scatter
lumped_mass_scatter = _impl.lumped_mass_scatter
stiffness_scatter = _impl.stiffness_scatter
tensor_stiffness_scatter = _impl.tensor_stiffness_scatter
convection_scatter = _impl.convection_scatter
load_scatter = _impl.load_scatter
grad_load_scatter = _impl.grad_load_scatter
