//! C ABI for the fedsl simulator.
