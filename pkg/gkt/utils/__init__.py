"""Binary records, grid interpolation and seed substreams."""
