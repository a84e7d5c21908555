"""HTTP service wrapping the training, evaluation, and certification API."""
