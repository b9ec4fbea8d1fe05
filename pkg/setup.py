from setuptools import Extension, setup

# The compiled kernel is optional: the package falls back to a vectorized
# numpy implementation when the extension is absent (see agentserve.kernels).
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "agentserve._mixcore",
                ["src/agentserve/_mixcore.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
