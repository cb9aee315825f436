//! Configuration-driven driver around `ampc-core`: one JSON config per run,
//! a small set of subcommands, and a fixed artifact layout per output
//! directory. The library surface exists so integration tests can call the
//! same code paths the binary does.

pub mod config;
pub mod formats;
pub mod runner;
