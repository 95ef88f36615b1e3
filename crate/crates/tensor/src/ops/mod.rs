pub mod conv;
pub mod elementwise;
pub mod shape;
pub mod spatial;
