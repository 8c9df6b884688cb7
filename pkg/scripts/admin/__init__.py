"""
Administrative tools
"""
