pub mod blocks;
pub mod counterexample;
pub mod fbsde;
pub mod kernels;
pub mod riccati;
pub mod spectral;
pub mod tree;
