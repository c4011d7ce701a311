import numpy as np
from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/mavsr/_kernels/_core.pyx",
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # The package works without the compiled kernels (pure-numpy fallback).
    ext_modules = []

setup(ext_modules=ext_modules, include_dirs=[np.get_include()])
