"""Numerical lab for a 1D wave equation with space-dependent damping"""
