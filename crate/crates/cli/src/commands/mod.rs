pub mod bench;
pub mod generate;
pub mod precompute;
pub mod probe;
pub mod solve;
