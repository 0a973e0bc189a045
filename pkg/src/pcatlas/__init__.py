"""Point clouds as spherical atlases: optimal-transport encoding, corruption and inpainting."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1
