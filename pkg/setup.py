import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # Pure-python kernel fallback is selected at import time, so the package
    # still works without the compiled extension.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "grouprec.kernels.ckernels",
                ["src/grouprec/kernels/ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
