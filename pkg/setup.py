import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("KCAN_NO_EXT"):
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "kcan._ckernels",
            ["src/kcan/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            language="c++",
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
