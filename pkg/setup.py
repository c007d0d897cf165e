"""Builds the optional Cython kernels; the package works without them."""

import os
import sys

from setuptools import setup

# glibc's libmvec gives vectorized exp() under -ffast-math
_CFLAGS = ["-O3", "-ffast-math"] if sys.platform == "linux" else ["-O3"]
_LDFLAGS = ["-lmvec", "-lm"] if sys.platform == "linux" else []

ext_modules = []
if os.environ.get("DIFFSCM_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "diffscm._ext._kernels",
                    ["src/diffscm/_ext/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=_CFLAGS,
                    extra_link_args=_LDFLAGS,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
