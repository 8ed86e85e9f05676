use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Normalized exponentials with max-subtraction.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = logits.data().to_vec();
    softmax_in_place(&mut out)?;
    Tensor::new(vec![out.len()], out)
}

pub(crate) fn softmax_in_place<T: Real>(z: &mut [T]) -> Result<()> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax received non-finite logits".into()));
    }
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v = *v / sum;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(v: &[f64]) -> Vec<f64> {
        softmax(&Tensor::new(vec![v.len()], v.to_vec()).unwrap()).unwrap().into_data()
    }

    #[test]
    fn examples() {
        assert_eq!(sm(&[0.3; 4]), vec![0.25; 4]);
        let p = sm(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-6 && (p[1] - 0.75).abs() < 1e-6);
        assert_eq!(sm(&[1000.0, 1000.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_non_finite() {
        let t = Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(softmax(&t), Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn shift_invariant_and_normalized(v in prop::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0) {
            let a = sm(&v);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = sm(&shifted);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*x > 0.0);
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
