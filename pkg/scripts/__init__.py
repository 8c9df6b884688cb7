"""
Scripts and utilities
"""
