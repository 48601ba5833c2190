use num_traits::{Float, FromPrimitive};

/// Float type the closed-form PHY and channel models are evaluated in.
pub trait Real: Float + FromPrimitive + std::fmt::Debug {}

impl Real for f32 {}
impl Real for f64 {}
