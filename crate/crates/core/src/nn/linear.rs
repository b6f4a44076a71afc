//! Fully connected layer over the flattened `C·H·W` features of each sample.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Weight shape `(out, in, 1, 1)`, bias shape `(1, out, 1, 1)`; output `(N, out, 1, 1)`.
pub fn linear<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let s = input.shape();
    let features = s.c * s.plane();
    let ws = weight.shape();
    if ws.c * ws.plane() != features {
        return Err(Error::InvalidShape(format!(
            "linear layer expects {} input features, got {features}",
            ws.c * ws.plane()
        )));
    }
    let out_features = ws.n;
    if let Some(b) = bias {
        if b.len() != out_features {
            return Err(Error::InvalidShape(format!(
                "linear bias has {} values for {out_features} outputs",
                b.len()
            )));
        }
    }
    let mut out = Tensor::zeros(Shape::new(s.n, out_features, 1, 1));
    // out (N×O) = X (N×F) · Wᵀ (F×O)
    T::gemm(
        s.n,
        features,
        out_features,
        input.data(),
        false,
        weight.data(),
        true,
        T::zero(),
        out.data_mut(),
    );
    if let Some(b) = bias {
        for row in out.data_mut().chunks_mut(out_features) {
            row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o += bv);
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = input.shape();
    let features = s.c * s.plane();
    let out_features = weight.shape().n;
    let mut gx = Tensor::zeros(s);
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(Shape::new(1, out_features, 1, 1));
    // dX (N×F) = dY (N×O) · W (O×F)
    T::gemm(
        s.n,
        out_features,
        features,
        grad_out.data(),
        false,
        weight.data(),
        false,
        T::zero(),
        gx.data_mut(),
    );
    // dW (O×F) = dYᵀ (O×N) · X (N×F)
    T::gemm(
        out_features,
        s.n,
        features,
        grad_out.data(),
        true,
        input.data(),
        false,
        T::zero(),
        gw.data_mut(),
    );
    for row in grad_out.data().chunks(out_features) {
        gb.data_mut().iter_mut().zip(row).for_each(|(b, &g)| *b += g);
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_weight() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 3, 1, 1), vec![0.5, -1.0, 2.0]).unwrap();
        let mut w = Tensor::zeros(Shape::new(3, 3, 1, 1));
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let b = Tensor::zeros(Shape::new(1, 3, 1, 1));
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), x.data());
    }

    #[test]
    fn small_hand_case() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 2, 1, 1), vec![2.0, 3.0]).unwrap();
        let w = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap();
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[6.0]);
    }

    #[test]
    fn random_matches_dot_product_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(Shape::new(3, 8, 1, 1), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(Shape::new(4, 8, 1, 1), -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(Shape::new(1, 4, 1, 1), -1.0, 1.0, &mut rng);
        let y = linear(&x, &w, Some(&b)).unwrap();
        for n in 0..3 {
            for o in 0..4 {
                let mut acc = b.data()[o];
                for f in 0..8 {
                    acc += w.data()[o * 8 + f] * x.data()[n * 8 + f];
                }
                assert!((y.data()[n * 4 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 1, 1));
        let w = Tensor::zeros(Shape::new(2, 4, 1, 1));
        assert!(linear(&x, &w, None).is_err());
    }
}
