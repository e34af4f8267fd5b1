# ───────────────────────────────────────────────────────────────────────────────
# app/__init__.py
"""Softmax GAN laboratory: autodiff, MLPs, batch-softmax losses, an exact
theory oracle on finite state spaces and a 2D training harness.

Entry point: run.py (python run.py --help).
"""
