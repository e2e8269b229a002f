pub mod linalg;
pub mod rng;
pub mod special;
pub mod tensor;

pub use rng::Rng;
pub use tensor::Tensor;
