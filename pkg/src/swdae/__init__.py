"""Detectability analysis and impulsive observers for switched linear DAEs."""

from .daepair import MatrixPair, NotRegular, decompose, is_regular, wong_limits
from .modeobs import MultiplicativeNoise, ModeObsData, build, design_gain
from .simulator import Mode, SimResult, SwitchedSystem, brute_force_oracle, solve_homogeneous, solve_with_input, transition
from .subspace import Subspace
from .trajectory import ImpulseRecord, PwsTrajectory
from .windowing import Window, WindowData, build_window, detect_certificate, error_budget, make_window

__version__ = "0.1.0"
