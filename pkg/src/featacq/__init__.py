"""Budget-aware sequential feature acquisition.

Subpackages cover the acquisition state machine (`core`), a small neural
network kernel with MC-dropout certainty (`nets`), acquisition policies
(`strategies`), tabular data preparation (`pipeline`), survey-driven cost
assignment (`survey`), SAS transport file parsing (`xpt`), evaluation sweeps
and reports (`evaluation`), and a command line front end (`cli`).
"""

__version__ = "0.1.0"
