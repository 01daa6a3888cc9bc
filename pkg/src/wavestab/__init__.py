"""Numerical checks for the transverse linear stability of small line solitary water waves."""

__version__ = "0.1.0"

__all__ = ["symbols", "soliton", "dn_solver", "waveop", "kp2", "resolvent_lab", "cli"]
