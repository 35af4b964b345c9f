"""Learners and training loops."""
