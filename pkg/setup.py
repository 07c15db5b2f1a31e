"""Build the optional Cython kernels.

The package works without them (pure-Python fallback), so a failed
compile only prints a warning.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("CRANMUX_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "cranmux._ckernels",
                    sources=["src/cranmux/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    language="c++",
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"warning: building without compiled kernels ({exc})", file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules)
