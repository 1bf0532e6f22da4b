#!/usr/bin/env python
# -*- coding: utf-8 -*-
#
# opnet documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import sys
import os

# Get the project root dir, which is the parent dir of this
cwd = os.getcwd()
project_root = os.path.dirname(cwd)

# Insert the project root dir as the first element in the PYTHONPATH.
# This lets us ensure that the source package is imported, and that its
# version is used.
sys.path.insert(0, project_root)

import opnet

# -- General configuration ---------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode']
templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'opnet'
copyright = u'2026, opnet developers'

version = opnet.__version__
release = opnet.__version__

exclude_patterns = ['_build']
pygments_style = 'sphinx'

# -- Options for HTML output -------------------------------------------

html_theme = 'alabaster'
html_static_path = ['_static']
htmlhelp_basename = 'opnetdoc'

# -- Options for manual page output ------------------------------------

man_pages = [
    ('index', 'opnet',
     u'opnet Documentation',
     [u'opnet developers'], 1)
]
