"""Regional optimal control: structure enumeration, lifted solves and checks."""

__version__ = "0.1.0"
