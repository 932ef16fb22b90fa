"""Build script for the optional compiled kernel module.

The package is fully functional without the extension: `emtrace._kernels`
falls back to the numpy implementation when `emtrace._core` is missing.
Build failures are therefore demoted to warnings instead of aborting the
install.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, warn and continue if not."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        sys.stderr.write(
            "WARNING: compiled kernels unavailable, using numpy fallback "
            f"({exc})\n"
        )


def make_extensions():
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "emtrace._core",
        sources=["src/emtrace/_core.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
