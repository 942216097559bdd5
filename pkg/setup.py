import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        name="pseudopost._kernels._psi_sweep",
        sources=["src/pseudopost/_kernels/_psi_sweep.pyx"],
        extra_compile_args=["-fopenmp", "-O3", "-g0"],
        extra_link_args=["-fopenmp"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
