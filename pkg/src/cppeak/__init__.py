"""Monte-Carlo coincident-peak prediction from published load forecasts."""

__version__ = "0.1.0"
