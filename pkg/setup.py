import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "constraintlab._kernels._split",
        ["src/constraintlab/_kernels/_split.pyx"],
        include_dirs=[np.get_include()],
        # No -march/-ffast-math: the compiled scan must stay bit-identical
        # to the pure-python backend (no FMA contraction, IEEE semantics).
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
