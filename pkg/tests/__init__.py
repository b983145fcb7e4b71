"""Test suite for tailvar."""
