#!/usr/bin/env python
# -*- coding: UTF-8 -*-

"""PanLab: Progressive attention networks for query-driven reference tasks
PanLab trains and evaluates attention models that find the object named
by a query in a cluttered image, on synthetic MNIST reference datasets,
with a small numpy autodiff engine and no deep learning framework.
"""

from setuptools import setup, find_packages
import io
from os import path

# --- get version ---
version = "unknown"
with open("panlab/version.py") as f:
    line = f.read().strip()
    version = line.replace("version = ", "").replace('"', '')
# --- /get version ---

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with io.open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

with io.open(path.join(here, 'requirements.txt'), encoding='utf-8') as f:
    requirements = [line.rstrip() for line in f if line.strip()]

setup(
    name='PanLab',
    version=version,
    description='Progressive attention networks for query-driven '
                'reference tasks',
    long_description=long_description,
    author='The PanLab Authors',
    license='Apache Software License',
    classifiers=[
        'License :: OSI Approved :: Apache Software License',
        'Development Status :: 4 - Beta',

        'Operating System :: OS Independent',

        'Intended Audience :: Developers',
        'Intended Audience :: Science/Research',

        'Topic :: Scientific/Engineering',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Image Recognition',
        'Topic :: Software Development :: Libraries :: Python Modules',

        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
    ],

    platforms=['any'],
    keywords="""attention progressive-attention visual-attention autodiff
                mnist segmentation numpy""",
    packages=find_packages(exclude=['contrib', 'docs', 'tests', 'configs']),
    python_requires='>=3.8',
    install_requires=requirements,
    extras_require={
        'test': ['pytest>=6.0'],
    },
    entry_points={
        'console_scripts': [
            'panlab=panlab.cli:main',
        ],
    },

    include_package_data=True,
)
