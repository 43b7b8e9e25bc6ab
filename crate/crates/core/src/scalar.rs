use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used by the value functions, the dense layers and the
/// transfer classifier.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Tag written into snapshot and model headers.
    const NAME: &'static str;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_f64() {
        assert_eq!(f32::from_f64_lossy(0.5).to_f64_lossy(), 0.5);
        assert_eq!(f64::from_f64_lossy(1e-300), 1e-300);
        assert_eq!(<f32 as Scalar>::NAME, "f32");
    }
}
