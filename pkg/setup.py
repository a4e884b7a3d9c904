import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BEAMDN_NO_EXT", "") in ("", "0"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "beamdn._kernels",
                ["src/beamdn/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no fast-math / FMA contraction: the Python fallback must match bit for bit
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
