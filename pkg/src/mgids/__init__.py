"""Information-directed sampling for tabular Markov games."""
