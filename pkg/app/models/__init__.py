"""Config specs and report records."""
