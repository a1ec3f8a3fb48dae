pub mod checker;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod sampling;
pub mod synthesis;
pub mod system_file;
pub mod simulator;
