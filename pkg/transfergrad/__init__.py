"""Transfer-based adversarial attacks with uniform scale and mix mask transformations."""

__version__ = "0.1.0"
