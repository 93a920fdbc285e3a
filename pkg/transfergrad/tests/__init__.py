"""Package-local tests for transfergrad."""
