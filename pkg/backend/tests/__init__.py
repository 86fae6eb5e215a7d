"""Test suite for the ShiftScope backend."""
