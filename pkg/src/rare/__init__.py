__version__ = "0.1.0"

# Carried by every JSON artifact and checkpoint this package writes.
SCHEMA_VERSION = "1"

__all__ = ["SCHEMA_VERSION", "__version__"]
