//! Decentralized multi-robot rendezvous on dynamic grid maps: map
//! generation, a masked-PPO training stack with a hand-rolled network, an
//! evaluation suite and a UDP/TCP swarm runtime for deploying the shared
//! policy across robot processes.

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod evalsuite;
pub mod gridmap;
pub mod neural;
pub mod ppo;
pub mod swarm;
pub mod util;

pub use error::{Error, Result};

// Compile and run the guide's code blocks as doc-tests so the book cannot
// drift out of sync with the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/maps.md")]
    mod maps {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/swarm.md")]
    mod swarm {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
