import numpy as np
from setuptools import Extension, setup

# The compiled warp kernels are optional: fronto._kernels falls back to the
# pure-NumPy implementation when the extension is absent.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "fronto._kernels._warp_cy",
                ["src/fronto/_kernels/_warp_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
