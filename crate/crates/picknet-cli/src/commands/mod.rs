pub mod bench;
pub mod enhance;
pub mod eval;
pub mod simulate;
pub mod train;
