//! Central finite-difference harness shared by the gradient-check suite and
//! the acceptance report.
//!
//! Each check builds `L = Σ f(inputs) · R` for a fixed random `R` (or uses a
//! scalar op output directly), back-propagates at the precision under test,
//! and compares at least 100 sampled input coordinates against
//! `(L(x + h) − L(x − h)) / 2h`. The difference quotient is always evaluated
//! with the 64-bit instantiation of the same op at the same (exactly
//! representable) point, so 32-bit forward rounding does not pollute the oracle.

use kutralnet::autograd::{BatchNormArgs, Tape, Var};
use kutralnet::nn::{ConvSpec, PoolSpec};
use kutralnet::octave::{octave_conv, OctavePair, OctavePath, OctaveSpec, OctaveWeights};
use kutralnet::{Element, ParamStore, Result, Shape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-6;
pub const MIN_COORDS: usize = 100;
/// Kink and tie margins, far wider than the step.
const MARGIN: f64 = 1e-2;

type OpFn<T> = dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>;

/// The same op body instantiated at the precision under test and at 64-bit.
struct Op<T: Element> {
    under_test: Box<OpFn<T>>,
    oracle: Box<OpFn<f64>>,
}

macro_rules! op {
    (|$t:ident, $v:ident| $body:expr) => {
        Op {
            under_test: Box::new(move |$t: &mut Tape<T>, $v: &[Var]| $body),
            oracle: Box::new(move |$t: &mut Tape<f64>, $v: &[Var]| $body),
        }
    };
}

fn tolerance<T: Element>() -> f64 {
    if std::mem::size_of::<T>() == 4 {
        TOL_F32
    } else {
        TOL_F64
    }
}

/// The spec'd relative error of an analytic derivative against a numeric one.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

fn oracle_output(f: &OpFn<f64>, inputs: &[Tensor<f64>]) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.value(out).data().to_vec()
}

/// Outcome of one op's check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub coords: usize,
    pub worst: f64,
    pub tol: f64,
    /// The worst coordinate as `(input, index, analytic, numeric)`.
    pub worst_at: (usize, usize, f64, f64),
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.coords >= MIN_COORDS && self.worst < self.tol
    }
}

fn check<T: Element>(out: &mut Vec<CheckResult>, name: &str, inputs: Vec<Tensor<T>>, op: Op<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let y = (op.under_test)(&mut tape, &vars).unwrap();
    let coeffs = (tape.shape(y) != Shape::SCALAR).then(|| Tensor::<T>::uniform(tape.shape(y), -1.0, 1.0, &mut rng));
    let loss = match &coeffs {
        Some(r) => tape.weighted_sum(y, r.clone()).unwrap(),
        None => y,
    };
    let mut store = ParamStore::<T>::new();
    let report = tape.backward(loss, &mut store).unwrap();

    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    coords.shuffle(&mut rng);
    coords.truncate(MIN_COORDS.max(coords.len() / 8).min(400));

    let wide: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    let wide_coeffs = coeffs.as_ref().map(Tensor::<T>::cast::<f64>);
    let pairs: Vec<(f64, f64, usize, usize)> = coords
        .iter()
        .map(|&(i, j)| {
            let analytic = report.grad(vars[i]).map_or(0.0, |g| g.data()[j].as_f64());
            let mut plus = wide.clone();
            let mut minus = wide.clone();
            plus[i].data_mut()[j] += H;
            minus[i].data_mut()[j] -= H;
            let step = plus[i].data()[j] - minus[i].data()[j];
            let yp = oracle_output(&*op.oracle, &plus);
            let ym = oracle_output(&*op.oracle, &minus);
            // Differencing per output before weighting avoids cancellation in the total.
            let numeric = match &wide_coeffs {
                Some(r) => yp
                    .iter()
                    .zip(&ym)
                    .zip(r.data())
                    .map(|((p, m), r)| r * (p - m))
                    .sum::<f64>(),
                None => yp[0] - ym[0],
            } / step;
            (analytic, numeric, i, j)
        })
        .collect();
    let mut result = CheckResult {
        name: name.to_string(),
        coords: pairs.len(),
        worst: 0.0,
        tol: tolerance::<T>(),
        worst_at: (0, 0, 0.0, 0.0),
    };
    if pairs.iter().all(|p| p.0 == 0.0) {
        // An all-zero sample cannot distinguish a broken backward from a flat op.
        result.worst = f64::INFINITY;
    }
    for (a, n, i, j) in pairs {
        let e = rel_err(a, n);
        if e > result.worst || (e.is_nan() && !result.worst.is_nan()) {
            result.worst = e;
            result.worst_at = (i, j, a, n);
        }
    }
    out.push(result);
}

fn uniform<T: Element>(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero so no coordinate sits near the kink.
fn away_from_zero<T: Element>(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let data = (0..shape.numel())
        .map(|_| {
            let mag = rng.gen_range(MARGIN..1.0);
            T::of_f64(if rng.gen_bool(0.5) { mag } else { -mag })
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Distinct values spaced apart in random order, so no pooling window ties.
fn distinct<T: Element>(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let mut vals: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * MARGIN - 1.0).collect();
    vals.shuffle(rng);
    Tensor::from_vec(shape, vals.into_iter().map(T::of_f64).collect()).unwrap()
}

pub fn run_conv<T: Element>(out: &mut Vec<CheckResult>) {
    let cases = [
        ("conv 3x3 dense", ConvSpec::new(3, 4, 3), Shape::new(2, 3, 6, 5)),
        (
            "conv 3x3 stride 2 bias",
            ConvSpec::new(2, 3, 3).with_stride(2).with_bias(true),
            Shape::new(2, 2, 7, 7),
        ),
        ("conv 1x1 pointwise", ConvSpec::pointwise(4, 3), Shape::new(2, 4, 5, 5)),
        (
            "conv grouped g=2",
            ConvSpec::new(4, 6, 3).with_groups(2),
            Shape::new(1, 4, 6, 6),
        ),
        ("conv depthwise", ConvSpec::depthwise(4, 1, 3), Shape::new(2, 4, 6, 6)),
        (
            "conv depthwise x2 stride 2",
            ConvSpec::depthwise(3, 2, 3).with_stride(2),
            Shape::new(2, 3, 7, 6),
        ),
        (
            "conv 5x5 pad 1",
            ConvSpec::new(2, 2, 5).with_padding(1),
            Shape::new(1, 2, 8, 8),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (i, (name, spec, xs)) in cases.into_iter().enumerate() {
        let mut inputs = vec![uniform::<T>(xs, &mut rng), uniform(spec.weight_shape(), &mut rng)];
        if spec.bias {
            inputs.push(uniform(spec.bias_shape(), &mut rng));
        }
        check(
            out,
            name,
            inputs,
            op!(|t, v| t.conv2d(v[0], v[1], v.get(2).copied(), spec)),
            100 + i as u64,
        );
    }
}

pub fn run_octave<T: Element>(out: &mut Vec<CheckResult>) {
    let cases = [
        (
            "octave 0.5->0.5 3x3",
            OctaveSpec::new(ConvSpec::new(6, 6, 3), 0.5, 0.5),
            Shape::new(2, 3, 6, 6),
        ),
        (
            "octave entry 0->0.5",
            OctaveSpec::new(ConvSpec::new(3, 4, 3), 0.0, 0.5),
            Shape::new(2, 3, 6, 6),
        ),
        (
            "octave exit 0.5->0",
            OctaveSpec::new(ConvSpec::new(4, 3, 3), 0.5, 0.0),
            Shape::new(2, 2, 6, 7),
        ),
        (
            "octave strided 0.5",
            OctaveSpec::new(ConvSpec::new(4, 4, 3), 0.5, 0.5).with_stride(2),
            Shape::new(2, 2, 8, 8),
        ),
        (
            "octave depthwise 0.5",
            OctaveSpec::depthwise(6, 3, 0.5),
            Shape::new(2, 3, 6, 6),
        ),
        (
            "octave pointwise odd extent",
            OctaveSpec::new(ConvSpec::pointwise(4, 4), 0.5, 0.5),
            Shape::new(1, 2, 7, 7),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (i, (name, spec, hs)) in cases.into_iter().enumerate() {
        let (_, lo_in) = spec.in_split();
        let mut inputs = vec![uniform::<T>(hs, &mut rng)];
        if lo_in > 0 {
            inputs.push(uniform(Shape::new(hs.n, lo_in, hs.h / 2, hs.w / 2), &mut rng));
        }
        let n_x = inputs.len();
        for q in OctavePath::ALL {
            if let Some(ps) = spec.path_spec(q) {
                inputs.push(uniform(ps.weight_shape(), &mut rng));
            }
        }
        let op = op!(|t, v| {
            let x = OctavePair {
                high: v[0],
                low: (n_x == 2).then(|| v[1]),
            };
            let mut k = n_x;
            let w = OctaveWeights::from_fn(&spec, |_, _| {
                k += 1;
                v[k - 1]
            });
            let y = octave_conv(t, x, &spec, &w)?;
            // Both outputs enter the loss: the low map is upsampled onto the high one.
            match y.low {
                Some(l) => {
                    let hs = t.shape(y.high);
                    let up = t.upsample_nearest(l, hs.h, hs.w);
                    t.add(y.high, up)
                }
                None => Ok(y.high),
            }
        });
        check(out, name, inputs, op, 200 + i as u64);
    }
}

pub fn run_batch_norm<T: Element>(out: &mut Vec<CheckResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for training in [true, false] {
        let c = 3;
        let cs = Shape::new(1, c, 1, 1);
        let inputs = vec![
            uniform::<T>(Shape::new(4, c, 4, 3), &mut rng),
            Tensor::uniform(cs, 0.5, 1.5, &mut rng),
            uniform(cs, &mut rng),
        ];
        let op = op!(|t, v| {
            let rm: Vec<_> = (0..c).map(|i| Element::of_f64(0.1 * i as f64)).collect();
            let rv: Vec<_> = (0..c).map(|i| Element::of_f64(0.5 + 0.3 * i as f64)).collect();
            t.batch_norm(
                v[0],
                BatchNormArgs {
                    gamma: v[1],
                    beta: v[2],
                    running_mean: &rm,
                    running_var: &rv,
                    eps: Element::of_f64(1e-5),
                    momentum: Element::of_f64(0.1),
                    training,
                    stats: None,
                },
            )
        });
        let name = if training {
            "batch-norm train"
        } else {
            "batch-norm eval"
        };
        check(out, name, inputs, op, 300 + training as u64);
    }
}

pub fn run_activation_and_pools<T: Element>(out: &mut Vec<CheckResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = away_from_zero::<T>(Shape::new(2, 3, 5, 5), &mut rng);
    check(
        out,
        "leaky-relu",
        vec![x],
        op!(|t, v| Ok(t.leaky_relu(v[0], Element::of_f64(0.01)))),
        400,
    );

    let x = distinct::<T>(Shape::new(2, 3, 7, 6), &mut rng);
    check(
        out,
        "max-pool 2x2",
        vec![x],
        op!(|t, v| t.max_pool2d(v[0], PoolSpec::HALVE)),
        401,
    );
    let x = distinct::<T>(Shape::new(1, 3, 7, 7), &mut rng);
    check(
        out,
        "max-pool 3x3 pad 1",
        vec![x],
        op!(|t, v| t.max_pool2d(v[0], PoolSpec::new(3, 2, 1))),
        402,
    );
    let x = uniform::<T>(Shape::new(2, 3, 7, 6), &mut rng);
    check(
        out,
        "avg-pool 2x2",
        vec![x],
        op!(|t, v| t.avg_pool2d(v[0], PoolSpec::HALVE)),
        403,
    );
    let x = uniform::<T>(Shape::new(1, 3, 6, 6), &mut rng);
    check(
        out,
        "avg-pool 3x3 pad 1",
        vec![x],
        op!(|t, v| t.avg_pool2d(v[0], PoolSpec::new(3, 1, 1))),
        404,
    );
    let x = uniform::<T>(Shape::new(2, 4, 5, 5), &mut rng);
    check(
        out,
        "global-avg-pool",
        vec![x],
        op!(|t, v| Ok(t.global_avg_pool(v[0]))),
        405,
    );
    let x = uniform::<T>(Shape::new(2, 3, 5, 5), &mut rng);
    check(
        out,
        "upsample nearest",
        vec![x],
        op!(|t, v| Ok(t.upsample_nearest(v[0], 11, 10))),
        406,
    );

    let pair = vec![
        uniform::<T>(Shape::new(2, 2, 4, 4), &mut rng),
        uniform(Shape::new(2, 3, 4, 4), &mut rng),
    ];
    check(
        out,
        "concat channels",
        pair,
        op!(|t, v| t.concat_channels(v[0], v[1])),
        407,
    );
    let pair = vec![
        uniform::<T>(Shape::new(2, 3, 4, 4), &mut rng),
        uniform(Shape::new(2, 3, 4, 4), &mut rng),
    ];
    check(out, "add", pair, op!(|t, v| t.add(v[0], v[1])), 408);
}

pub fn run_linear_and_loss<T: Element>(out: &mut Vec<CheckResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![
        uniform::<T>(Shape::new(5, 12, 1, 1), &mut rng),
        uniform(Shape::new(6, 12, 1, 1), &mut rng),
        uniform(Shape::new(1, 6, 1, 1), &mut rng),
    ];
    check(out, "linear", inputs, op!(|t, v| t.linear(v[0], v[1], Some(v[2]))), 500);
    let inputs = vec![
        uniform::<T>(Shape::new(3, 2, 3, 3), &mut rng),
        uniform(Shape::new(4, 2, 3, 3), &mut rng),
    ];
    check(
        out,
        "linear spatial input",
        inputs,
        op!(|t, v| t.linear(v[0], v[1], None)),
        501,
    );

    let labels: Vec<usize> = (0..60).map(|i| (i * 7 % 3 == 0) as usize).collect();
    let logits = Tensor::<T>::uniform(Shape::new(60, 2, 1, 1), -3.0, 3.0, &mut rng);
    let oracle_labels = labels.clone();
    let op = Op {
        under_test: Box::new(move |t: &mut Tape<T>, v: &[Var]| t.cross_entropy(v[0], &labels)),
        oracle: Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.cross_entropy(v[0], &oracle_labels)),
    };
    check(out, "cross-entropy", vec![logits], op, 502);
}

/// Every op group at the precision `T`.
pub fn run_all<T: Element>() -> Vec<CheckResult> {
    let mut out = Vec::new();
    run_conv::<T>(&mut out);
    run_octave::<T>(&mut out);
    run_batch_norm::<T>(&mut out);
    run_activation_and_pools::<T>(&mut out);
    run_linear_and_loss::<T>(&mut out);
    out
}
