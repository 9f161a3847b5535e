"""Builds the optional compiled kernels; the package falls back to numpy without them."""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("TREEPOISON_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "treepoison._ckernels",
                    ["src/treepoison/_ckernels.pyx"],
                    # no FMA contraction: results must match the numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
