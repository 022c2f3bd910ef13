"""
API package for Stream Cache
"""
