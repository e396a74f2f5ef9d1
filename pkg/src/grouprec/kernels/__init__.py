"""Inner-loop kernels for the factorization baselines.

The compiled extension is used when it is importable; otherwise the numpy
fallback is selected.  Set GROUPREC_KERNELS=python or =cython to force a
backend (forcing cython raises if the extension was not built).
"""

import os

_force = os.environ.get("GROUPREC_KERNELS", "").lower()
if _force == "python":
    from . import pykernels as _impl
elif _force == "cython":
    from . import ckernels as _impl  # type: ignore[attr-defined]
elif _force:
    raise ValueError(f"GROUPREC_KERNELS must be 'python' or 'cython', got {_force!r}")
else:
    try:
        from . import ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import pykernels as _impl

BACKEND = "cython" if _impl.__name__.endswith("ckernels") else "python"

svd_sgd = _impl.svd_sgd
svdpp_sgd = _impl.svdpp_sgd
nmf_epochs = _impl.nmf_epochs
