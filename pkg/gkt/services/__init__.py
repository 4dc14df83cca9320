"""Thread pool, training, checkpoints, benchmarks and run manifests."""
