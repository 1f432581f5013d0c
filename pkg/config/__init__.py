"""Configuration modules for the UV makeup engine."""
