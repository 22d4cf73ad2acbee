"""Cross-fitted orthogonal difference-in-differences estimators."""
