"""Build the optional Cython kernels.

The package works without them: ``mflmm.kernels`` falls back to the numpy
implementation when the extension is missing. Set ``MFLMM_NO_EXT=1`` to skip
compilation entirely.
"""
import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: skipping mflmm._kernels ({exc}); numpy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); numpy fallback will be used")


ext_modules = []
if os.environ.get("MFLMM_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "mflmm._kernels",
                    ["src/mflmm/_kernels.pyx"],
                    # no -ffast-math: the engine relies on IEEE semantics for reproducibility
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
