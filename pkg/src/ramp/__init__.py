"""Robust adaptive tube MPC for linear systems with parametric uncertainty.

The package combines moving window set-membership identification with a
projected least-mean-squares point estimate, and feeds both into a
tube-based model predictive controller whose cross-section scaling
adapts online as the parameter set shrinks.

Modules
-------
solvers     thin LP/QP (and optional SDP) interface over mature backends
geometry    halfspace-polytope operations (support, boxes, contractive sets)
model       uncertain system description and constraint containers
estimation  set-membership window update and projected LMS identifier
offline     controller synthesis, tube constants, terminal sets
tube_mpc    condensed tube QP, online controller step, tube propagators
simulation  closed-loop scenarios, traces, disturbance sampling, batches
cli         command line entry points and scenario file IO
"""

__version__ = "0.1.0"
