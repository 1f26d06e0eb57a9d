"""HTTP routes and request schemas."""
