import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "ttcbarrier._kernels",
        sources=["src/ttcbarrier/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
    ),
]

# TTCBARRIER_NO_EXT=1 installs the pure-python package only; the kernels
# fall back to ttcbarrier._kernels_py at import time.
if cythonize is None or os.environ.get("TTCBARRIER_NO_EXT") == "1":
    ext_modules = []
else:
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
