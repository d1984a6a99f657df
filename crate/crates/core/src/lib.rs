pub mod quadrature;
pub mod gcch;
pub mod graph;
pub mod metrics;
pub mod special;
pub mod datasets;
pub mod experiment;
pub mod vb;
