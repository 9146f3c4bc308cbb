"""FAS-CANet channel extrapolation workbench - modular package."""
