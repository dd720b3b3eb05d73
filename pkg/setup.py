"""Builds the optional compiled ray-marching kernel.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile is non-fatal for `pip install -e .` with
`--config-settings=--global-option=--no-ext` style workflows; here we just
let setuptools report the error if the toolchain is broken.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "brickray.render._kernels",
        ["src/brickray/render/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
