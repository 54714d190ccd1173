"""Scene files, generators, benchmarks, plots and the command line."""
