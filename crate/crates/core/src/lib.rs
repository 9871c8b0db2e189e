//! Fiducial-bead alignment and parallel-beam reconstruction for nano-CT
//! projection series.
//!
//! The pipeline runs in the order of the modules below:
//!
//! 1. [`stack_io`] loads a series of projection frames (binary PGM plus a JSON
//!    manifest).
//! 2. [`trail_roi`] multiplies per-frame minimum masks into a trail map and
//!    proposes a search window around the bead's jitter trail.
//! 3. [`ref_locator`] finds the bead in every frame, either by gray-value
//!    barycenter or by circle fitting.
//! 4. [`aligner`] turns the track into per-frame shifts, applies them and
//!    crops the common field symmetric about the rotation axis.
//! 5. [`fbp_recon`] reconstructs each detector row by filtered
//!    back-projection into a [`Volume`].
//!
//! [`phantom_lab`] generates synthetic bead series and head phantoms with
//! known ground truth for testing every stage.

pub mod aligner;
pub mod error;
pub mod fbp_recon;
pub mod image;
pub mod phantom_lab;
pub mod ref_locator;
pub mod stack_io;
pub mod trail_roi;

pub use error::{Error, Result};
pub use image::{Field, Image, Volume};
pub use stack_io::ProjectionStack;
pub use trail_roi::Roi;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/stacks.md")]
    mod stacks {}
    #[doc = include_str!("../../../book/src/trail.md")]
    mod trail {}
    #[doc = include_str!("../../../book/src/locating.md")]
    mod locating {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/phantoms.md")]
    mod phantoms {}
    #[doc = include_str!("../../../book/src/workbench.md")]
    mod workbench {}
}
