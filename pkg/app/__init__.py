"""
ShellRig Application Package
"""
