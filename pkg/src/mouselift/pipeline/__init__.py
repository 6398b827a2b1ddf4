"""File formats, synthetic data, feature export and the command line."""
