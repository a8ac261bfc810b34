"""Safety filters based on (environmental) control barrier functions, with input-delay compensation."""

__version__ = "0.1.0"
