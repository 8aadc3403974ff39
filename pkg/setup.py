import os

from setuptools import setup

ext_modules = []
if os.environ.get("SCQR_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "scqr._kernels",
                    ["src/scqr/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # reassociation lets the reductions vectorize; NaN and inf semantics are kept
                    extra_compile_args=["-O3", "-fno-math-errno", "-fno-trapping-math",
                                        "-fassociative-math", "-fno-signed-zeros"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
