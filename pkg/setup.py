"""Build script: compiles the CRF dynamic-programming core as a C extension.

Set CORRNER_SKIP_EXT=1 to install pure-Python only; the package falls back
to the numpy kernels at import time when the extension is absent.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CORRNER_SKIP_EXT") != "1":
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "corrner.kernels._crf",
                ["src/corrner/kernels/_crf.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
