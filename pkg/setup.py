"""Builds the optional compiled simulator kernel.

The package imports fine without it; ``greenrl.kernels`` falls back to the
pure-Python implementation when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("GREENRL_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "greenrl._simkernel",
                    ["src/greenrl/_simkernel.pyx"],
                    include_dirs=[np.get_include()],
                    # keep float results identical to the Python fallback
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
