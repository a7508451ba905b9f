pub mod bench;
pub mod enhance;
pub mod eval;
pub mod selftest;
pub mod synth;
pub mod train;
