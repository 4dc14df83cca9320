"""Executable checks of the Petrov-Galerkin reading of Galerkin-type attention."""
