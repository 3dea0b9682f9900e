//! A minimal dense row-major tensor over f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use super::NnError;

/// Element types the kernels accept. The bound set is what the math needs:
/// IEEE float ops plus conversion from literals held as f64.
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an f64 constant into the working precision.
#[inline]
pub fn scalar<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must convert to the working precision")
}

/// Dense row-major storage plus a shape. The element count always equals
/// the product of the dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NnError::InvalidArgument(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data, different shape; the element count must match.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, NnError> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise conversion through f64, used to lift f32 states into
    /// the f64 checking harness.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| scalar(v.to_f64().expect("finite value")))
                .collect(),
        }
    }
}

/// Unpacks a 4-d shape, reporting `context` on failure.
pub(crate) fn dims4<T: Scalar>(
    t: &Tensor<T>,
    context: &'static str,
) -> Result<(usize, usize, usize, usize), NnError> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(NnError::ShapeMismatch {
            context,
            expected: vec![0, 0, 0, 0],
            got: t.shape().to_vec(),
        }),
    }
}

/// Unpacks a 2-d shape, reporting `context` on failure.
pub(crate) fn dims2<T: Scalar>(
    t: &Tensor<T>,
    context: &'static str,
) -> Result<(usize, usize), NnError> {
    match *t.shape() {
        [n, c] => Ok((n, c)),
        _ => Err(NnError::ShapeMismatch {
            context,
            expected: vec![0, 0],
            got: t.shape().to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn zeros_and_filled() {
        let z = Tensor::<f64>::zeros(&[2, 2]);
        assert_eq!(z.data(), &[0.0; 4]);
        let f = Tensor::<f32>::filled(&[3], 1.5);
        assert_eq!(f.data(), &[1.5; 3]);
        assert_eq!(f.numel(), 3);
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f32>::from_vec(&[2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn cast_roundtrips_f32() {
        let t = Tensor::<f32>::from_vec(&[3], vec![0.1, -2.5, 3.25]).unwrap();
        let d: Tensor<f64> = t.cast();
        let back: Tensor<f32> = d.cast();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn finiteness_check() {
        let mut t = Tensor::<f32>::zeros(&[2]);
        assert!(t.all_finite());
        t.data_mut()[1] = f32::NAN;
        assert!(!t.all_finite());
    }
}
