"""Forecasting toolkit for monthly consumer price indices: seasonal ARIMAX
with lunar-holiday regressors, outlier scans, three-criterion model
selection, backtests, seasonal adjustment and diffusion-index forecasts."""

__version__ = "0.1.0"
