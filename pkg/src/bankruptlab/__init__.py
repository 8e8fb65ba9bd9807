"""Bankruptcy prediction from balance sheets and corporate filing behaviour."""

__version__ = "0.1.0"
