"""Build script for the optional compiled kernels.

The extension links against OpenSSL's libcrypto for SHA-256. If Cython or a
C toolchain is missing the build still succeeds and the package falls back to
the pure-Python kernels at import time.
"""
import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: {ext.name} not built ({exc})", file=sys.stderr)


def extensions():
    if os.environ.get("IOTLEDGER_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "iotledger._ckernels",
        ["src/iotledger/_ckernels.pyx"],
        libraries=["crypto"],
        extra_compile_args=["-O3", "-Wno-deprecated-declarations"],
    )
    try:
        return cythonize(
            [ext],
            compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
        )
    except Exception as exc:  # noqa: BLE001
        print(f"warning: cythonize failed ({exc})", file=sys.stderr)
        return []


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
