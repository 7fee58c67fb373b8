"""Semantic data augmentation pipeline for episodic robot-learning datasets."""

__version__ = "0.1.0"
