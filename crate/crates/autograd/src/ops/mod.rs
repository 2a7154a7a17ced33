pub mod conv;
pub mod deform;
pub mod elementwise;
pub mod linalg;
pub mod shape;
