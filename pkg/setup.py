import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    extensions = cythonize(
        [Extension("tempz._kernel._gibbs_cy",
                   ["src/tempz/_kernel/_gibbs_cy.pyx"],
                   include_dirs=[numpy.get_include()])],
        language_level=3,
    )
except ImportError:
    extensions = []  # pure-Python fallback kernel is used instead

setup(ext_modules=extensions)
