"""
ShellRig Routes Package
"""

from . import experiments, scenarios
