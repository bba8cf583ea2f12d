import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "prunescope._ckernels",
                ["src/prunescope/_ckernels.pyx"],
                language="c++",
                extra_compile_args=["-O3"],
            )
        ],
        language_level="3",
    )
except ImportError:
    # The package falls back to the numpy kernels at import time.
    ext_modules = []

if os.environ.get("PRUNESCOPE_SKIP_EXT"):
    ext_modules = []

setup(ext_modules=ext_modules)
