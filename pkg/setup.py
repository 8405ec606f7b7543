import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    USE_CYTHON = True
except ImportError:
    USE_CYTHON = False

# HYBRIDSPLAT_NO_EXT=1 skips the compiled kernels; the numpy fallback is used.
SKIP_EXT = os.environ.get("HYBRIDSPLAT_NO_EXT", "") == "1"


def _extensions():
    if SKIP_EXT or not USE_CYTHON:
        return []
    ext = Extension(
        "hybridsplat._raster_ext",
        ["src/hybridsplat/_raster_ext.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=_extensions())
