"""Inexact proximal cubic-regularized Newton methods."""
