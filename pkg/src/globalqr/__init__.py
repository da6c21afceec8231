"""Global quantile regression tests."""
