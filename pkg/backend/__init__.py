"""
Backend package for the eoc-lab mean-field toolkit
"""
