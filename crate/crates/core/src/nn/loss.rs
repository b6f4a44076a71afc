use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Row-wise softmax over the channel axis of `(N, C, 1, 1)` logits, with
/// max subtraction.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = logits.shape().c;
    let mut out = logits.detached();
    for row in out.data_mut().chunks_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    out
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`), using the
/// log-sum-exp form. Returns the loss and the softmax probabilities.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let s = logits.shape();
    if s.n == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != s.n || s.plane() != 1 {
        return Err(Error::InvalidShape(format!(
            "cross-entropy over logits {s} with {} labels",
            labels.len()
        )));
    }
    let classes = s.c;
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        if label >= classes {
            return Err(Error::InvalidShape(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[label].as_f64();
    }
    Ok((T::of_f64(total / s.n as f64), softmax(logits)))
}

/// Gradient of the mean loss: `(p − onehot) · upstream / N`.
pub fn cross_entropy_backward<T: Element>(probs: &Tensor<T>, labels: &[usize], upstream: T) -> Tensor<T> {
    let classes = probs.shape().c;
    let scale = upstream / T::of_f64(labels.len() as f64);
    let mut g = probs.detached();
    for (row, &label) in g.data_mut().chunks_mut(classes).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn logits(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(v.len() / 2, 2, 1, 1), v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&logits(&[0.0, 0.0])).data(), &[0.5, 0.5]);
        assert_eq!(softmax(&logits(&[1000.0, 1000.0])).data(), &[0.5, 0.5]);
        let a = softmax(&logits(&[0.3, -1.2]));
        let b = softmax(&logits(&[10.3, 8.8]));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!((a.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, _) = cross_entropy(&logits(&[0.0, 0.0]), &[1]).unwrap();
        assert!((l - std::f32::consts::LN_2).abs() < 1e-6);
        let (l, _) = cross_entropy(&logits(&[20.0, -20.0]), &[0]).unwrap();
        assert!(l.abs() < 1e-6);
        assert!(matches!(
            cross_entropy(&Tensor::<f32>::zeros(Shape::new(0, 2, 1, 1)), &[]),
            Err(Error::EmptyBatch)
        ));
    }
}
