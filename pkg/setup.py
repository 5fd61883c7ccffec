"""Build hook for the optional compiled kernel extension.

The package is pure Python plus one Cython extension holding the hot
numeric kernels. If Cython or a C compiler is unavailable the extension
is skipped and the numpy fallback in stylescout.numerics.kernels.pure is
used at import time instead.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "stylescout.numerics.kernels._core",
                ["src/stylescout/numerics/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
