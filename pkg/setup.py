import numpy as np
from setuptools import Extension, setup

# The compiled kernel core is optional: if Cython (or a C toolchain) is not
# available the package falls back to the numpy implementation at import time.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "steelrl._core._ckernels",
                ["src/steelrl/_core/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
