//! Headless driving simulator over 3D Gaussian splat assets.

pub mod geom;
pub mod ply;
pub mod pose;
pub mod splat;
pub mod physics;
pub mod spline;
pub mod track;
pub mod render;
pub mod sh;
pub mod env;
pub mod fixtures;
pub mod rl;
pub mod proto;
pub mod config;
pub mod bench;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/configuration.md")]
    struct Configuration;
    #[doc = include_str!("../../../book/src/poses.md")]
    struct Poses;
    #[doc = include_str!("../../../book/src/rendering.md")]
    struct Rendering;
    #[doc = include_str!("../../../book/src/environment.md")]
    struct Environment;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/protocol.md")]
    struct Protocol;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../book/src/bench.md")]
    struct Bench;
}
