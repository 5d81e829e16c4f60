use crate::error::{Error, Result};
use crate::tensor::{kl_divergence, masked_softmax_rows, Tensor};

/// KL(target ‖ predicted), averaged over rows with at least one unmasked slot.
pub fn kl_loss(target: &Tensor, predicted: &Tensor, mask: &Tensor) -> Result<f64> {
    if target.shape() != predicted.shape() || mask.shape() != predicted.shape() || predicted.shape().len() != 2 {
        return Err(Error::shape(
            "kl_loss",
            format!("target {:?}, predicted {:?}, mask {:?}", target.shape(), predicted.shape(), mask.shape()),
        ));
    }
    kl_divergence(target.data(), predicted.data(), mask.data(), predicted.cols()).map(|(v, _)| v)
}

/// Row softmax over `[N,k]` logits restricted to `mask`.
pub fn masked_softmax(logits: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if logits.shape().len() != 2 || mask.len() != logits.len() {
        return Err(Error::shape("masked_softmax", format!("{:?} with mask of {}", logits.shape(), mask.len())));
    }
    Tensor::new(logits.shape().to_vec(), masked_softmax_rows(logits.data(), mask, logits.cols()))
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    masked_softmax(logits, &vec![true; logits.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn kl_identical_is_zero() {
        let p = t(2, 3, &[0.2, 0.3, 0.5, 1.0, 0.0, 0.0]);
        let m = t(2, 3, &[1.0; 6]);
        assert!(kl_loss(&p, &p, &m).unwrap().abs() < 1e-9);
    }

    #[test]
    fn kl_rejects_negative_and_fully_masked() {
        let p = t(1, 2, &[0.5, 0.5]);
        let neg = t(1, 2, &[-0.1, 1.1]);
        let m = t(1, 2, &[1.0, 1.0]);
        assert!(kl_loss(&neg, &p, &m).is_err());
        assert!(kl_loss(&p, &neg, &m).is_err());
        let none = t(1, 2, &[0.0, 0.0]);
        assert!(matches!(kl_loss(&p, &p, &none), Err(Error::NoValidRows)));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            logits in prop::collection::vec(-30.0f64..30.0, 12),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax(&t(3, 4, &logits)).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let b = softmax(&t(3, 4, &shifted)).unwrap();
            for r in 0..3 {
                prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn kl_is_non_negative(raw_t in prop::collection::vec(0.0f64..1.0, 8), raw_p in prop::collection::vec(0.01f64..1.0, 8)) {
            let norm = |v: &[f64]| -> Vec<f64> {
                v.chunks(4).flat_map(|r| {
                    let s: f64 = r.iter().sum::<f64>().max(1e-12);
                    r.iter().map(move |x| x / s).collect::<Vec<_>>()
                }).collect()
            };
            let (tt, pp) = (norm(&raw_t), norm(&raw_p));
            prop_assume!(tt.chunks(4).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));
            let v = kl_loss(&t(2, 4, &tt), &t(2, 4, &pp), &t(2, 4, &[1.0; 8])).unwrap();
            prop_assert!(v >= -1e-9);
        }
    }
}
