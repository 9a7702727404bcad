//! Traffic-flow forecasting from band-limited signal modes.
//!
//! The pipeline decomposes each sensor's flow series into narrow-band
//! modes, selects how many modes a region needs from the reconstruction
//! loss of a sampled subset of nodes, and feeds the modes (plus calendar
//! features) into an attention-based spatio-temporal graph convolutional
//! forecaster.
//!
//! Module map:
//! - [`spectral`] — mirroring, DFTs, half-spectrum handling.
//! - [`vmd`] — the alternating-update decomposition itself.
//! - [`modeselect`] — reconstruction-loss-thresholded choice of K.
//! - [`graph`] — road graph, Laplacians, Chebyshev basis.
//! - [`model`] — attention + graph convolution forecaster with exact
//!   gradients from a small reverse-mode tape.
//! - [`traineval`] — windowing, training loop, metrics, ablations,
//!   hyper-parameter sweeps.

pub mod autodiff;
pub mod error;
pub mod fingerprint;
pub mod graph;
pub mod modecache;
pub mod model;
pub mod modeselect;
pub mod spectral;
pub mod tensor;
pub mod timestamp;
pub mod traineval;
pub mod vmd;

pub use error::{Error, Result};

// Every fenced Rust block in the guide compiles and runs under
// `cargo test --doc`, keeping the book in sync with the crate.
#[cfg(doctest)]
mod guide {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(decomposition, "../../../book/src/decomposition.md");
    chapter!(mode_selection, "../../../book/src/mode-selection.md");
    chapter!(graphs, "../../../book/src/graphs.md");
    chapter!(model, "../../../book/src/model.md");
    chapter!(training, "../../../book/src/training.md");
    chapter!(cli, "../../../book/src/cli.md");
}
