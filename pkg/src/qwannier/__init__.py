"""Quasi-Wannier reduction of two-dimensional magnetic Schrodinger operators.

Modules, bottom up: ``lattice`` (geometry), ``bloch`` (plane-wave bands),
``wannier`` (quasi-Wannier function), ``magphase`` (magnetic phases),
``magwannier`` (magnetic quasi-Wannier family), ``feshbach`` (Schur
reduction), ``effective`` (hopping kernel and magnetic matrix), ``refspec``
(finite-difference reference operator), ``pipeline`` and ``cli``.
"""
__version__ = "0.1.0"
