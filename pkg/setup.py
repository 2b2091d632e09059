import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TCD_NO_SPEEDUPS") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "tcd._kernels._speedups",
                    ["src/tcd/_kernels/_speedups.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython / numpy at build time: install with the pure-Python kernels.
        ext_modules = []

setup(ext_modules=ext_modules)
