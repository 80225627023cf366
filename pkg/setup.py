import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

flags = ["-O3"]
if os.environ.get("DRAPE_NATIVE", "1") == "1":
    flags.append("-march=native")

extensions = [
    Extension("drape._kernels", ["src/drape/_kernels.pyx"],
              include_dirs=[np.get_include()], extra_compile_args=flags),
    Extension("drape.runtime._frame", ["src/drape/runtime/_frame.pyx"],
              include_dirs=[np.get_include(), "src/drape/runtime"], extra_compile_args=flags,
              depends=["src/drape/runtime/_blend.h"]),
]

# the pure-Python fallbacks keep the package usable when Cython is absent
setup(ext_modules=cythonize(extensions, language_level=3) if cythonize else [])
