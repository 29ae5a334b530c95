"""Coupled l2-lq inversion of FDEM induction data."""
