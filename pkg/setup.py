import os

from setuptools import setup

ext_modules = []
if os.environ.get("HITLIST6_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hitlist6._kernels._ckern",
                    ["src/hitlist6/_kernels/_ckern.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython toolchain: install the pure backend only. The package
        # selects the fallback at import time (hitlist6._kernels).
        ext_modules = []

setup(ext_modules=ext_modules)
