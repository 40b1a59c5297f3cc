"""Scripts directory for utility scripts."""

