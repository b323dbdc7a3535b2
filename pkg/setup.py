"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure-Python twin is selected at
import time), so the extension is marked optional and any compile failure
degrades to the fallback instead of failing the install.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "docrerank.kernels._speedups",
                ["src/docrerank/kernels/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # keep float semantics identical to CPython: no contraction,
                # no fast-math
                extra_compile_args=["-O3", "-ffp-contract=off"],
                optional=True,
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
