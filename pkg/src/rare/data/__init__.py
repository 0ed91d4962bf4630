"""Dataset schema, loading and synthetic generation."""
