"""Build script for the optional compiled kernel extension.

The package works without the extension (pure-numpy fallback is selected at
import time), so the extension is marked optional and a failed compile does
not fail the install.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "splitlatent._kernels._native",
                ["src/splitlatent/_kernels/_native.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

for ext in extensions:
    ext.optional = True

setup(ext_modules=extensions)
