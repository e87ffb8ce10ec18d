//! Laplacian eigenvector positional encodings made sign-invariant by SignNet.

mod eigen;
mod signnet;

pub use eigen::{
    laplacian_eigenvectors, laplacian_eigenvectors_with, normalized_laplacian_apply, symmetric_eigen, EigenBasis,
    EigenError, EigenOptions, DENSE_LIMIT,
};
pub use signnet::{init_signnet, signnet_encode, SignNetParams};
