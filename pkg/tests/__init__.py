"""Test suite for the GhostRNN kit."""
