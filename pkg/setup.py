"""Build script for the optional compiled metric kernels.

The package is fully functional without the extension: cl2s.metrics falls
back to the NumPy implementations if `cl2s.metrics._fastpath` is missing
or fails to build. Set CL2S_SKIP_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, otherwise warn and continue."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or Cython missing
            print(f"WARNING: skipping compiled kernels ({exc}); "
                  "cl2s will use the pure-NumPy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: failed to build {ext.name} ({exc}); "
                  "cl2s will use the pure-NumPy fallback")


def extensions():
    if os.environ.get("CL2S_SKIP_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "cl2s.metrics._fastpath",
        ["src/cl2s/metrics/_fastpath.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
