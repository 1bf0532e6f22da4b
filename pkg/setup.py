#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""opnet package configuration script."""

from setuptools import setup

from opnet import (
    __author__ as author,
    __version__ as version,
)


with open('README.rst') as readme_file:
    readme = readme_file.read()

with open('HISTORY.rst') as history_file:
    history = history_file.read().replace('.. :changelog:', '')

requirements = [
    'numpy',
]

test_requirements = [
    'coverage',
    'hypothesis',
    'mock',
    'pytest',
]

setup(
    name='opnet',
    version=version,
    description="Channel-relation attention over feature pyramids",
    long_description=readme + '\n\n' + history,
    author=author,
    packages=[
        'opnet',
    ],
    package_dir={'opnet':
                 'opnet'},
    include_package_data=True,
    install_requires=requirements,
    python_requires='>=3.8',
    license="MIT",
    zip_safe=False,
    keywords='channel attention feature pyramid gradient check',
    entry_points={
        'console_scripts': [
            'opnet = opnet.cli:main',
        ]
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
    ],
    extras_require={'test': test_requirements},
)
