import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernels are optional: the package falls back to the pure-numpy
# implementations in gsanim._kernels_py when the extension is absent.
# GSANIM_NO_EXT=1 skips the build entirely (useful to exercise the fallback).
ext_modules = []
if cythonize is not None and not os.environ.get("GSANIM_NO_EXT"):
    # -ffp-contract=off keeps FMA contraction from perturbing the compiled
    # lane relative to the documented operation order.
    ext_modules = cythonize(
        [
            Extension(
                "gsanim._kernels._core",
                ["src/gsanim/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp", "-ffp-contract=off"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
