# -*- coding: utf-8 -*-
#
# pyrevinr documentation build configuration file.

import sys
import os

sys.path.insert(0, os.path.abspath('../..'))

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.mathjax',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'pyrevinr'
copyright = '2026, Will McGinnis'
author = 'Will McGinnis'
version = '0.1.0'
release = '0.1.0'

exclude_patterns = []
pygments_style = 'sphinx'
autodoc_member_order = 'bysource'

html_theme = 'alabaster'
html_static_path = ['_static']
htmlhelp_basename = 'pyrevinrdoc'

latex_documents = [
    (master_doc, 'pyrevinr.tex', 'pyrevinr Documentation', 'Will McGinnis', 'manual'),
]

man_pages = [
    (master_doc, 'pyrevinr', 'pyrevinr Documentation', [author], 1)
]
