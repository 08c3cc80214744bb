"""
``manage.py case-study``: the case_study command under its hyphenated name
"""
from .case_study import Command  # noqa: F401
