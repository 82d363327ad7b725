import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("CTRLSCHED_PURE_PYTHON"):
    ext_modules = cythonize(
        [Extension(
            "ctrlsched.assignment._lsa_ext",
            ["src/ctrlsched/assignment/_lsa_ext.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )],
        language_level=3,
    )

setup(ext_modules=ext_modules)
