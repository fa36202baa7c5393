pub(crate) mod conv;
mod elementwise;
mod linalg;
pub(crate) mod loss;
pub(crate) mod norm;
mod reduce;
mod shape;
