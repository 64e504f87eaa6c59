"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a pure-numpy
fallback is selected at import time); building it makes the solver and
training loops roughly two orders of magnitude faster.
"""

import os

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    if not os.path.exists("src/zipmpc/_kernels/_core.pyx"):
        raise ImportError("kernel source not present")
    ext_modules = cythonize(
        [
            Extension(
                "zipmpc._kernels._core",
                ["src/zipmpc/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    print("Cython unavailable: installing with the pure-python kernel backend only")

setup(ext_modules=ext_modules)
