"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension; the numpy
implementations in ``scalar_closure._kernels_py`` are selected at import
time when the compiled module is missing.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/scalar_closure/_kernels.pyx"],
        compiler_directives={"language_level": "3"},
    )
    include_dirs = [numpy.get_include()]
except Exception as exc:  # pragma: no cover - build environment dependent
    print("kernel extension skipped: %s" % exc)
    ext_modules = []
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
