import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

march = os.environ.get("BITCONV_MARCH", "native")
extra = ["-O3"] + ([f"-march={march}"] if march else ["-mpopcnt"])

extensions = [
    Extension(
        "bitconv._xnor",
        ["src/bitconv/_xnor.pyx"],
        include_dirs=[np.get_include(), "src/bitconv"],
        depends=["src/bitconv/_bitops.h"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=extra,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
