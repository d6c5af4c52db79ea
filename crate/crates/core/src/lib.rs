pub mod fermion_det;
pub mod fields;
pub mod gibbs;
pub mod girsanov;
pub mod harness;
pub mod kernels;
pub mod potentials;
pub mod quadrature;
pub mod solver;
pub mod superspace;
