import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "colpack._ckernel",
    ["src/colpack/_ckernel.pyx"],
    include_dirs=[np.get_include()],
    # no FMA contraction and no sin/cos fusion into sincos (1 ulp apart in glibc):
    # keeps results bit-identical to the Python backend
    extra_compile_args=["-O2", "-ffp-contract=off", "-fno-builtin-sin", "-fno-builtin-cos"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
