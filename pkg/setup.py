from setuptools import setup, find_packages
from codecs import open
from os import path

VERSION = '0.1.0'

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setup(
    name='pyrevinr',
    version=VERSION,
    description='Uncertainty-aware implicit neural representations of scalar volumes',
    long_description=long_description,
    long_description_content_type='text/markdown',
    license='GPL3',
    classifiers=[
      'Development Status :: 3 - Alpha',
      'Intended Audience :: Science/Research',
      'Programming Language :: Python :: 3',
      'Topic :: Scientific/Engineering :: Visualization',
    ],
    keywords='volume compression implicit neural representation uncertainty isosurface',
    packages=find_packages(exclude=['tests*']),
    include_package_data=True,
    author='Will McGinnis',
    python_requires='>=3.7',
    install_requires=['numpy>=1.20', 'scipy>=1.6'],
    extras_require={'numba': ['numba>=0.53']},
    entry_points={'console_scripts': ['pyrevinr = pyrevinr.cli:main']},
    author_email='will@pedalwrencher.com'
)
