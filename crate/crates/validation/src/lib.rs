//! Hosts the acceptance suite under `tests/`.
