"""Build script: compiles the optional sweep kernel extension.

The package works without the extension (a pure-Python fallback is selected at
import time); the compiled kernel is what makes chain runs at realistic scale
fast, so build it whenever a C toolchain is available.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "blocklink._sweep",
        ["src/blocklink/_sweep.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"})
    if cythonize
    else [],
)
