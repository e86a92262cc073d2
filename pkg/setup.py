"""Build the optional Cython core; the package falls back to numpy when absent."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPARSEPOS_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "sparsepos._core",
                    ["src/sparsepos/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
