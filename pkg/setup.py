import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


def extensions():
    if cythonize is None or os.environ.get("SBMPOT_NO_EXT"):
        return []
    npy_random = os.path.join(os.path.dirname(np.__file__), "random", "lib")
    ext = Extension(
        "sbmpot._ckernels",
        ["src/sbmpot/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        library_dirs=[npy_random],
        libraries=["npyrandom", "m"],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    return cythonize([ext], language_level=3, compiler_directives={"boundscheck": False, "wraparound": False, "cdivision": True})


setup(ext_modules=extensions())
