"""Constants and typed configuration objects."""
