"""Frequency-based model updating with global minimum search and identifiability diagnostics."""
