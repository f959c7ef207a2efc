//! Energy-optimal control of plant ensembles on matrix Lie groups that share a
//! single multiplexed control channel.
//!
//! The crate is organised bottom-up:
//!
//! * [`liegroup`]: planar rotation groups, their products, exp/log and the
//!   adjoint/coadjoint machinery.
//! * [`multiplex`]: control boxes, the star-shaped admissible set, the `z` map
//!   and the auxiliary accumulator that encodes single-channel scheduling.
//! * [`plants`]: discrete-mechanics plant models (satellite, underwater
//!   vehicle) and joint rollouts.
//! * [`optimizer`]: direct transcription and an augmented Lagrangian solver.
//! * [`pmp`]: Hamiltonian evaluation, adjoint sweeps, multiplier estimation and
//!   the maximum-principle verifier.
//! * [`scenario`] and [`io`]: TOML scenarios and CSV/TOML artifacts.
//!
//! ```
//! use lieplex::multiplex::{z, JointControl};
//!
//! let shared = JointControl::new(vec![vec![1.0, 0.0], vec![2.0, 0.0]]);
//! assert_eq!(z(&shared), [6.0, 2.0]);
//!
//! let scheduled = JointControl::new(vec![vec![0.05], vec![0.0]]);
//! assert_eq!(z(&scheduled), [0.0, 0.0]);
//! ```

pub mod error;
pub mod io;
pub mod liegroup;
pub mod multiplex;
pub mod optimizer;
pub mod plants;
pub mod pmp;
pub mod scenario;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lie-groups.md")]
    mod lie_groups {}
    #[doc = include_str!("../../../book/src/multiplexing.md")]
    mod multiplexing {}
    #[doc = include_str!("../../../book/src/plants.md")]
    mod plants {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/certificates.md")]
    mod certificates {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
