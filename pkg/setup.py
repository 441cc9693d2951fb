import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extra_compile = ["-O3", "-fopenmp", "-ffp-contract=off"]
if os.environ.get("GMRCONV_NATIVE"):
    extra_compile.append("-march=native")

ext_module = Extension(
    "gmrconv.conv._ckernels",
    ["src/gmrconv/conv/_ckernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=extra_compile,
    extra_link_args=["-fopenmp"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize(ext_module, language_level=3))
