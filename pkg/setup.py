import os

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    pass
else:
    args = ["-O3", "-fno-math-errno", "-fopenmp-simd"]
    if not os.environ.get("IRMEN_PORTABLE"):
        args.append("-march=native")
    ext_modules = cythonize(
        [
            Extension(
                "irmen._kernel",
                ["src/irmen/_kernel.pyx"],
                include_dirs=[np.get_include(), "src/irmen"],
                libraries=["m"],
                extra_compile_args=args,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
