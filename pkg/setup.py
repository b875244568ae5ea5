"""Build the optional compiled kernel extension.

If Cython, numpy headers or a C compiler are missing the package still
installs; ``seisnet.kernels`` then falls back to the pure-numpy kernels.
"""

import os

from setuptools import setup


def _extensions():
    if os.environ.get("SEISNET_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "seisnet._ckernels",
        ["src/seisnet/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fno-trapping-math"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
