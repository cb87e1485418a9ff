"""Koopman-operator solutions of Lambert's problem with and without J2."""

__version__ = "0.1.0"
