//! Task-scheduled distributed 3D FFT engine.
//!
//! The transform runs as three batched 1D passes (or a 2D+1D slab variant),
//! with data redistributed between stage-specific decompositions through a
//! non-blocking transport. Local work is expressed as chunk tasks with
//! read/write dependencies and executed by a locality-aware work-stealing
//! scheduler guided by a latency–bandwidth cost model.
//!
//! ```
//! use num_complex::Complex;
//! use taskfft::fft::{naive_dft_1d, Direction, Kernel1d};
//!
//! // a length-4 delta transforms to a flat spectrum
//! let mut line = vec![Complex::new(0.0f64, 0.0); 4];
//! line[0] = Complex::new(1.0, 0.0);
//! let kern = Kernel1d::new(4, Direction::Forward);
//! let mut scratch = vec![Complex::new(0.0, 0.0); kern.scratch_len()];
//! kern.process(&mut line, &mut scratch);
//! for v in &line {
//!     assert!((v - Complex::new(1.0, 0.0)).norm() < 1e-12);
//! }
//! // and agrees with the quadratic-time reference transform
//! let mut delta = vec![Complex::new(0.0f64, 0.0); 4];
//! delta[0] = Complex::new(1.0, 0.0);
//! assert_eq!(naive_dft_1d(&delta, Direction::Forward).len(), 4);
//! ```

pub mod bench;
pub mod config;
pub mod cost;
pub mod error;
pub mod events;
pub mod fft;
pub mod grid;
pub mod pipeline;
pub mod real;
pub mod redist;
pub mod sched;
pub mod transport;

pub use error::{Error, Result};
pub use real::Precision;

/// The guide from `book/`, re-exposed as module docs so that every code
/// block in it compiles and runs under `cargo test`.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    pub mod decomposition {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    pub mod kernels {}
    #[doc = include_str!("../../../book/src/redistribution.md")]
    pub mod redistribution {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    pub mod scheduling {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
