"""Build script: compiles the optional LSTM recurrence kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed. Set RADLABEL_NO_EXT=1
to skip the extension entirely.
"""

import os
import sys

from setuptools import setup

ext_modules = []
if not os.environ.get("RADLABEL_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension(
            "radlabel.net._recurrence_cy",
            sources=["src/radlabel/net/_recurrence_cy.pyx"],
            extra_compile_args=["-O3"],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        print("Cython not available; building without the compiled kernel",
              file=sys.stderr)

setup(ext_modules=ext_modules)
