"""This is the main package for the torus_lab package."""

__author__ = 'torus-lab developers'
__email__ = 'torus-lab@users.noreply.github.com'
