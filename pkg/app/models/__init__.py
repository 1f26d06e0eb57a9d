"""Trial records, cells and contingency tables."""
