"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a pure-Python twin of
every kernel is selected at import time); set DEXHAND_SKIP_EXT=1 to install
without compiling.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("DEXHAND_SKIP_EXT") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    # Keep gcc from fusing cos(x)+sin(x) pairs into glibc sincos(), whose
    # result can differ from separate calls by one ulp; the pure-Python twin
    # calls cos/sin separately and the backends must match bit for bit.
    extra = [] if os.name == "nt" else ["-fno-builtin-sin", "-fno-builtin-cos", "-fno-builtin-sincos"]
    ext = Extension(
        "dexhand.kernels._cykernels",
        ["src/dexhand/kernels/_cykernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=extra,
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
