"""Build script for the optional compiled core.

The package works without the extension; ``gmmfield._backend`` falls back to
the numpy implementation when ``gmmfield._core`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("GMMFIELD_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "gmmfield._core",
                    ["src/gmmfield/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
