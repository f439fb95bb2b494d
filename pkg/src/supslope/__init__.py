"""Sup-slopes, sub-solutions and a continuity solver for hessian-type equations on tori."""

__version__ = "0.1.0"
