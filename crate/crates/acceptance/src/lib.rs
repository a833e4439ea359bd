//! Acceptance suite for `pmcmc-lab`; the checks live in `tests/acceptance.rs`.
//! It is a separate package so that it runs after the unit and integration
//! tests of the library.
