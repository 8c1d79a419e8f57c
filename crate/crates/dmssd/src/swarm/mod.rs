//! Distributed deployment of the frozen policy: a line protocol for state
//! broadcast and model distribution, a hot-swapping model server, the
//! per-robot decision loop, and an orchestration harness.

pub mod orchestrate;
pub mod protocol;
pub mod robot;
pub mod server;
