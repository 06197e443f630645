"""Build script: compiles the optional Cython clustering kernels.

The package is fully functional without the compiled extension; the
cluster subpackage falls back to the pure-numpy kernels at import time.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lesionvae.cluster._kernels",
                ["src/lesionvae/cluster/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
