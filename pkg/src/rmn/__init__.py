"""Multi-hop relation memory networks for story and dialog QA, built on a
small from-scratch reverse-mode autodiff core."""

__version__ = "0.1.0"
