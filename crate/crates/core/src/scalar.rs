use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type usable by the bound formulas and value tables.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every scalar")
    }

    fn of_u64(x: u64) -> Self {
        Self::from_u64(x).expect("u64 converts to every scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_scalar {
    ($($t:ty),*) => { $(impl Scalar for $t {})* };
}

impl_scalar!(f32, f64);
