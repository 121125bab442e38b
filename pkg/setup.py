from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # fallback kernels are used at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("ncsim._kernels._ckernels", ["src/ncsim/_kernels/_ckernels.pyx"],
                   optional=True)],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
