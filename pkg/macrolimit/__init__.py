"""
Macroscopic limits of weak spin measurements and of noisy PR-box ensembles.
"""
