"""Build script for the optional compiled kernel.

The package works without the extension: isochk._core falls back to the
pure-Python kernel when the compiled module is missing or fails to build.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "isochk._core._kernel",
                ["src/isochk/_core/_kernel.pyx"],
                language="c++",
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
