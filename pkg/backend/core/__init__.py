"""
Configuration, exceptions, activations and data models
"""
