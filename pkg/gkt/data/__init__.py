"""Benchmark PDE data: random fields, solvers and the dataset file format."""
