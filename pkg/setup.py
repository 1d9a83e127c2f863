"""Build script.

The compiled kernel in ``_speedups.pyx`` is optional: when Cython or a C
compiler is unavailable the package installs in pure-Python form and the
numpy fallback kernels are used instead.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class _OptionalBuildExt(build_ext):
    """Skip the extension instead of failing the whole install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, broken toolchain
            print(f"warning: compiled kernel skipped ({exc}); "
                  "falling back to pure-Python kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to pure-Python kernels")


def _extensions():
    if os.environ.get("COALITION_ATTRIB_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "coalition_attrib._speedups",
        ["src/coalition_attrib/_speedups.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=_extensions(), cmdclass={"build_ext": _OptionalBuildExt})
