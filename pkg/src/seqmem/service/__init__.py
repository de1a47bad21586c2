"""HTTP service wrapping the simulator."""
