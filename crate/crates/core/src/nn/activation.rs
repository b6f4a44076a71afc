use crate::tensor::{Element, Tensor};

/// Negative-side slope used by every KutralNet variant unless configured otherwise.
pub const DEFAULT_LEAKY_SLOPE: f32 = 0.01;

pub fn leaky_relu<T: Element>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|x| if x >= T::zero() { x } else { slope * x })
}

pub fn leaky_relu_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut g = grad_out.detached();
    for (d, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x < T::zero() {
            *d *= slope;
        }
    }
    g
}
