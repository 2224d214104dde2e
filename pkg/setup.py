#!/usr/bin/env python

import io

from setuptools import setup, find_packages


setup(
    name='foldcore',
    version='0.1.0',
    description='Differentiable optimization layers by fixed-point folding',
    long_description=io.open('README.rst', encoding='utf-8').read(),
    author='The foldcore developers',
    scripts=['bin/foldcore.py'],
    packages=find_packages(exclude=['tests']),
    install_requires=[
        'numpy>=1.17',
        'scipy>=1.4',
    ],
    license='MIT',
    python_requires='>=3.8',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: Implementation :: CPython',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
)
