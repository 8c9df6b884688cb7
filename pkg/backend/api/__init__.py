"""
Command line surface and output writers
"""
