import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the numpy tracer is used
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("RLPATH_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "rlpath.scenegen._ctracer",
                ["src/rlpath/scenegen/_ctracer.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction, no fast-math: bit parity with the numpy tracer
                extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
