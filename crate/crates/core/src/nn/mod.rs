//! Minimal dense neural-network toolkit: GEMM-backed layers with explicit
//! backward passes, flat parameter storage and Adam.

pub mod adam;
pub mod bn_mlp;
pub mod ops;
pub mod params;
pub mod real;

pub use adam::{Adam, AdamConfig};
pub use bn_mlp::{BnMlp, BnMlpCache};
pub use params::{checksum, Checkpoint, Init, NamedTensor, ParamLayout, ParamSpec, INIT_STD};
pub use real::{gemm, Mat, Real};
