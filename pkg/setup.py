from setuptools import setup, Extension

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "gclrec.kernels._spmm",
                ["src/gclrec/kernels/_spmm.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

# package metadata lives in pyproject.toml; the extension is optional and the
# pure-numpy backend is used when the build is skipped
setup(ext_modules=ext_modules)
