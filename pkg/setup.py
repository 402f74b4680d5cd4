import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pointwave.kernels._fastkern",
                ["src/pointwave/kernels/_fastkern.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython: the package still works on the NumPy kernel backend.
    ext_modules = []

setup(ext_modules=ext_modules)
