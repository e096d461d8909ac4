# Core module: physics models, pulse programs, fitting and run output
__version__ = "0.3.0"
