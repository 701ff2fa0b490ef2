"""Knowledge-aware conditional attention networks for recommendation."""

__version__ = "0.1.0"
