"""Desk-scale laboratory for radially undersampled cine MRI reconstruction."""

__version__ = "0.1.0"
