"""Build the optional compiled kernel; the package works without it."""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = cythonize(
    [
        Extension(
            "olapsim.kernel._ckernel",
            ["src/olapsim/kernel/_ckernel.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O2"],
            optional=True,
        )
    ],
    language_level=3,
)

setup(ext_modules=extensions)
