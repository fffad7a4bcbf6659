//! Central finite-difference checks of every differentiable tape operation
//! and of a complete small network, in 64-bit precision.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Fault, NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{build_multiresunet, ModelConfig, Network};
use crate::nn::{Mode, Padding, RunningStats};
use crate::tensor::Tensor;
use crate::train::loss::bce_term;

pub const SMOOTH_TOLERANCE: f64 = 1e-6;
pub const NON_SMOOTH_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckedOp {
    Add,
    Sub,
    Mul,
    Concat,
    Sum,
    Relu,
    Sigmoid,
    Conv2d,
    Conv2dStrided,
    ConvTranspose2d,
    MaxPool2d,
    BatchNormTraining,
    BatchNormInference,
    BinaryCrossEntropy,
    /// A complete MultiResUNet (base width 8, 16×16 input, batch 2).
    Model,
}

impl CheckedOp {
    pub const ALL: [CheckedOp; 15] = [
        CheckedOp::Add,
        CheckedOp::Sub,
        CheckedOp::Mul,
        CheckedOp::Concat,
        CheckedOp::Sum,
        CheckedOp::Relu,
        CheckedOp::Sigmoid,
        CheckedOp::Conv2d,
        CheckedOp::Conv2dStrided,
        CheckedOp::ConvTranspose2d,
        CheckedOp::MaxPool2d,
        CheckedOp::BatchNormTraining,
        CheckedOp::BatchNormInference,
        CheckedOp::BinaryCrossEntropy,
        CheckedOp::Model,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckedOp::Add => "add",
            CheckedOp::Sub => "sub",
            CheckedOp::Mul => "mul",
            CheckedOp::Concat => "concat",
            CheckedOp::Sum => "sum",
            CheckedOp::Relu => "relu",
            CheckedOp::Sigmoid => "sigmoid",
            CheckedOp::Conv2d => "conv2d",
            CheckedOp::Conv2dStrided => "conv2d_strided",
            CheckedOp::ConvTranspose2d => "conv_transpose2d",
            CheckedOp::MaxPool2d => "maxpool2d",
            CheckedOp::BatchNormTraining => "batchnorm_training",
            CheckedOp::BatchNormInference => "batchnorm_inference",
            CheckedOp::BinaryCrossEntropy => "binary_cross_entropy",
            CheckedOp::Model => "model",
        }
    }

    /// Ops with kinks are sampled away from them and held to a looser bound.
    pub fn is_smooth(self) -> bool {
        !matches!(self, CheckedOp::Relu | CheckedOp::MaxPool2d | CheckedOp::Model)
    }

    pub fn tolerance(self) -> f64 {
        if self.is_smooth() {
            SMOOTH_TOLERANCE
        } else {
            NON_SMOOTH_TOLERANCE
        }
    }
}

impl fmt::Display for CheckedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckedOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckedOp::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown op `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Coordinates sampled per input tensor of a single op.
    pub op_coords: usize,
    /// Coordinates sampled per parameter tensor of the model.
    pub model_coords: usize,
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            step: 1e-5,
            floor: 1e-4,
            op_coords: 48,
            model_coords: 2,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpReport {
    pub op: CheckedOp,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(input, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Evaluated {
    /// Additive contributions to the scalar root.
    terms: Vec<f64>,
    signature: u64,
    grads: Vec<Tensor<f64>>,
}

type Subject<'a> = dyn FnMut(&[Tensor<f64>], bool) -> Result<Evaluated> + 'a;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Uniform in `±[lo, hi]`, bounded away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mag = uniform(rng, shape, lo, hi);
    let data = mag.data().iter().map(|&v| if rng.gen::<bool>() { v } else { -v }).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn check(
    op: CheckedOp,
    inputs: Vec<Tensor<f64>>,
    coords: usize,
    cfg: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
    subject: &mut Subject<'_>,
) -> Result<OpReport> {
    let base = subject(&inputs, true)?;
    let mut work = inputs;
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut worst_at = None;
    for i in 0..work.len() {
        let len = work[i].len();
        let picks = sample(rng, len, coords.min(len));
        for j in picks.iter() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + cfg.step;
            let plus = subject(&work, false)?;
            work[i].data_mut()[j] = orig - cfg.step;
            let minus = subject(&work, false)?;
            work[i].data_mut()[j] = orig;
            if plus.signature != base.signature || minus.signature != base.signature {
                skipped += 1;
                continue;
            }
            // Differencing term by term avoids cancelling two large totals.
            let diff: f64 = plus.terms.iter().zip(&minus.terms).map(|(p, m)| p - m).sum();
            let numeric = diff / (2.0 * cfg.step);
            let analytic = base.grads[i].data()[j];
            let err = relative_error(analytic, numeric, cfg.floor);
            if err > worst || worst_at.is_none() {
                worst = worst.max(err);
                worst_at = Some((i, j, analytic, numeric));
            }
            checked += 1;
        }
    }
    let tolerance = op.tolerance();
    Ok(OpReport {
        op,
        checked,
        skipped,
        max_rel_error: worst,
        worst: worst_at,
        tolerance,
        passed: checked > 0 && worst < tolerance,
    })
}

/// Wraps a tape builder into a subject whose root is `Σ w ⊙ out` for a
/// fixed random `w`, so every output element contributes.
fn op_subject<'a>(
    weights_seed: u64,
    fault: Option<Fault>,
    build: impl Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId> + 'a,
) -> impl FnMut(&[Tensor<f64>], bool) -> Result<Evaluated> + 'a {
    let mut weights: Option<Tensor<f64>> = None;
    move |inputs, want| {
        let mut tape = Tape::new();
        if let Some(f) = fault {
            tape.inject_fault(f);
        }
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.variable(t.clone())).collect::<Result<_>>()?;
        let out = build(&mut tape, &ids)?;
        let shape = tape.value(out).shape().to_vec();
        let w = weights.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
            uniform(&mut rng, &shape, -1.0, 1.0)
        });
        let wn = tape.constant(w.clone())?;
        let prod = tape.mul(out, wn)?;
        let root = tape.sum(prod)?;
        let terms = tape.value(prod).data().to_vec();
        let signature = tape.branch_signature();
        let grads = if want {
            let mut g = tape.backward(root)?;
            ids.iter()
                .map(|&id| g.take(id).ok_or_else(|| Error::Config("input received no gradient".into())))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Evaluated {
            terms,
            signature,
            grads,
        })
    }
}

fn check_op(op: CheckedOp, cfg: &GradcheckConfig) -> Result<OpReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (op as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let ws = rng.gen();
    let fault = cfg.fault;
    let n = cfg.op_coords;
    let x = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -1.0, 1.0);
    macro_rules! run {
        ($inputs:expr, $build:expr) => {{
            let inputs = $inputs;
            let mut s = op_subject(ws, fault, $build);
            check(op, inputs, n, cfg, &mut rng, &mut s)
        }};
    }
    match op {
        CheckedOp::Add => run!(vec![x(&mut rng, &[2, 3, 4]), x(&mut rng, &[2, 3, 4])], |t, i| t.add(i[0], i[1])),
        CheckedOp::Sub => run!(vec![x(&mut rng, &[2, 3, 4]), x(&mut rng, &[2, 3, 4])], |t, i| t.sub(i[0], i[1])),
        CheckedOp::Mul => run!(vec![x(&mut rng, &[2, 3, 4]), x(&mut rng, &[2, 3, 4])], |t, i| t.mul(i[0], i[1])),
        CheckedOp::Concat => run!(
            vec![x(&mut rng, &[2, 3, 3, 2]), x(&mut rng, &[2, 3, 3, 3])],
            |t, i| t.concat_channels(i[0], i[1])
        ),
        CheckedOp::Sum => run!(vec![x(&mut rng, &[2, 3, 4])], |t, i| t.sum(i[0])),
        CheckedOp::Relu => run!(vec![away_from_zero(&mut rng, &[2, 4, 4, 2], 0.05, 1.0)], |t, i| t.relu(i[0])),
        CheckedOp::Sigmoid => run!(vec![uniform(&mut rng, &[2, 4, 4, 2], -4.0, 4.0)], |t, i| t.sigmoid(i[0])),
        CheckedOp::Conv2d => run!(
            vec![x(&mut rng, &[1, 5, 5, 2]), x(&mut rng, &[3, 3, 2, 4]), x(&mut rng, &[4])],
            |t, i| t.conv2d(i[0], i[1], Some(i[2]), 1, Padding::Same)
        ),
        CheckedOp::Conv2dStrided => run!(
            vec![x(&mut rng, &[1, 7, 6, 1]), x(&mut rng, &[3, 3, 1, 3]), x(&mut rng, &[3])],
            |t, i| t.conv2d(i[0], i[1], Some(i[2]), 2, Padding::Valid)
        ),
        CheckedOp::ConvTranspose2d => run!(
            vec![x(&mut rng, &[2, 3, 2, 3]), x(&mut rng, &[2, 2, 3, 2]), x(&mut rng, &[2])],
            |t, i| t.conv_transpose2d(i[0], i[1], Some(i[2]))
        ),
        CheckedOp::MaxPool2d => run!(vec![x(&mut rng, &[2, 4, 4, 2])], |t, i| t.maxpool2d(i[0])),
        CheckedOp::BatchNormTraining => run!(
            vec![
                uniform(&mut rng, &[2, 2, 3, 4], -2.0, 3.0),
                uniform(&mut rng, &[4], 0.5, 1.5),
                x(&mut rng, &[4]),
            ],
            |t, i| {
                let mut stats = RunningStats::new(4)?;
                t.batchnorm(i[0], i[1], i[2], &mut stats, Mode::Training)
            }
        ),
        CheckedOp::BatchNormInference => {
            let mut stats = RunningStats::new(4)?;
            stats.mean = x(&mut rng, &[4]);
            stats.var = uniform(&mut rng, &[4], 0.2, 2.0);
            run!(
                vec![
                    x(&mut rng, &[2, 2, 3, 4]),
                    uniform(&mut rng, &[4], 0.5, 1.5),
                    x(&mut rng, &[4]),
                ],
                move |t: &mut Tape<f64>, i: &[NodeId]| {
                    let mut s = stats.clone();
                    t.batchnorm(i[0], i[1], i[2], &mut s, Mode::Inference)
                }
            )
        }
        CheckedOp::BinaryCrossEntropy => {
            let target = uniform(&mut rng, &[2, 4, 4, 1], 0.0, 1.0).map(|v| if v < 0.5 { 0.0 } else { 1.0 });
            run!(vec![uniform(&mut rng, &[2, 4, 4, 1], 0.05, 0.95)], move |t, i| t
                .binary_cross_entropy(i[0], &target))
        }
        CheckedOp::Model => check_model(cfg, &mut rng),
    }
}

fn check_model(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<OpReport> {
    let graph = build_multiresunet(&ModelConfig::new(2, &[16, 16], 1).with_ubase(8))?;
    let mut net = Network::<f64>::new(graph, cfg.seed)?;
    let x = uniform(rng, &[2, 16, 16, 1], 0.0, 1.0);
    let y = uniform(rng, &[2, 16, 16, 1], 0.0, 1.0).map(|v| if v < 0.3 { 1.0 } else { 0.0 });
    let mut inputs = vec![x];
    inputs.extend(net.params.trainable().iter().map(|p| p.tensor.clone()));
    let fault = cfg.fault;
    let mut subject = |inputs: &[Tensor<f64>], want: bool| -> Result<Evaluated> {
        for (slot, t) in net.params.trainable_mut().zip(&inputs[1..]) {
            slot.data_mut().copy_from_slice(t.data());
        }
        let mut tape = Tape::new();
        if let Some(f) = fault {
            tape.inject_fault(f);
        }
        let xn = tape.variable(inputs[0].clone())?;
        let rec = net.record(&mut tape, xn, Mode::Training, true)?;
        let root = tape.binary_cross_entropy(rec.output, &y)?;
        let images = y.shape()[0] as f64;
        let terms = y
            .data()
            .iter()
            .zip(tape.value(rec.output).data())
            .map(|(&t, &p)| bce_term(t, p) / images)
            .collect();
        let signature = tape.branch_signature();
        let grads = if want {
            let mut g = tape.backward(root)?;
            let mut out = vec![g.take(xn).ok_or_else(|| Error::Config("input received no gradient".into()))?];
            for &p in &rec.params {
                out.push(g.take(p).ok_or_else(|| Error::Config("parameter received no gradient".into()))?);
            }
            out
        } else {
            Vec::new()
        };
        Ok(Evaluated {
            terms,
            signature,
            grads,
        })
    };
    check(CheckedOp::Model, inputs, cfg.model_coords, cfg, rng, &mut subject)
}

/// Runs the listed checks in order.
pub fn run_gradcheck(ops: &[CheckedOp], cfg: &GradcheckConfig) -> Result<Vec<OpReport>> {
    if ops.is_empty() {
        return Err(Error::Config("gradcheck needs at least one op".into()));
    }
    ops.iter().map(|&op| check_op(op, cfg)).collect()
}

/// Fixed-width pass/fail table.
pub fn render_table(reports: &[OpReport]) -> String {
    let mut s = format!(
        "{:<22} {:>7} {:>7} {:>12} {:>9}  result\n",
        "op", "checked", "skipped", "max_rel_err", "tol"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<22} {:>7} {:>7} {:>12.3e} {:>9.0e}  {}\n",
            r.op.as_str(),
            r.checked,
            r.skipped,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    s
}
