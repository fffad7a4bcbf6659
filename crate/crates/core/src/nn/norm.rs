//! Per-channel batch normalization over every axis except the last.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}

/// Trainable parameter count of a batch-norm layer.
pub fn batchnorm_param_count(channels: usize) -> usize {
    2 * channels
}

/// Non-trainable running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub epsilon: T,
    pub momentum: T,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(RunningStats {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::full(&[channels], T::one())?,
            epsilon: T::from_f64_lossy(DEFAULT_EPSILON),
            momentum: T::from_f64_lossy(DEFAULT_MOMENTUM),
        })
    }

    /// `running = momentum · running + (1 − momentum) · batch`
    pub(crate) fn update(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let m = self.momentum;
        let rest = T::one() - m;
        for (r, &b) in self.mean.data_mut().iter_mut().zip(batch_mean) {
            *r = m * *r + rest * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(batch_var) {
            *r = m * *r + rest * b;
        }
    }
}

/// Full parameter set of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize, mode: Mode) -> Result<Self> {
        Ok(BatchNormParams {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            stats: RunningStats::new(channels)?,
            mode,
        })
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

/// What the backward pass needs from a batch-norm forward.
#[derive(Debug, Clone)]
pub(crate) struct BnSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

pub(crate) struct BnForward<T> {
    pub out: Tensor<T>,
    pub saved: BnSaved<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

pub(crate) fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    mode: Mode,
) -> Result<BnForward<T>> {
    let c = x.channels();
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running mean", &stats.mean), ("running var", &stats.var)] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batchnorm",
                format!("{name} shape {:?} does not match {c} channels", t.shape()),
            ));
        }
    }
    let count = x.len() / c;
    let (mean, var) = match mode {
        Mode::Training => {
            if count < 2 {
                return Err(Error::DegenerateBatch);
            }
            let inv_count = T::one() / T::from_usize(count).unwrap();
            let mut mean = vec![T::zero(); c];
            for row in x.data().chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_count);
            let mut var = vec![T::zero(); c];
            for row in x.data().chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s *= inv_count);
            (mean, var)
        }
        Mode::Inference => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| (v + stats.epsilon).sqrt().recip()).collect();
    let shift: Vec<T> = mean.iter().zip(&inv_std).map(|(&m, &s)| -m * s).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for ((row, hrow), orow) in x.data().chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(out.chunks_exact_mut(c)) {
        for (((((h, o), &v), &s), &sh), (&g, &b)) in hrow
            .iter_mut()
            .zip(orow.iter_mut())
            .zip(row)
            .zip(&inv_std)
            .zip(&shift)
            .zip(gamma.data().iter().zip(beta.data()))
        {
            *h = v * s + sh;
            *o = g * *h + b;
        }
    }
    Ok(BnForward {
        out: Tensor::from_parts(x.shape().to_vec(), out),
        saved: BnSaved {
            xhat,
            inv_std,
            training: mode == Mode::Training,
        },
        batch_mean: mean,
        batch_var: var,
    })
}

pub(crate) struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub(crate) fn batchnorm_backward<T: Scalar>(
    saved: &BnSaved<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> BnGrads<T> {
    let c = gamma.len();
    let count = dy.len() / c;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (row, hrow) in dy.data().chunks_exact(c).zip(saved.xhat.chunks_exact(c)) {
        for (((dg, db), &d), &h) in dgamma.iter_mut().zip(dbeta.iter_mut()).zip(row).zip(hrow) {
            *dg += d * h;
            *db += d;
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    if saved.training {
        // dx = γ·inv_std · (dy − Σdy/M − x̂·Σ(dy·x̂)/M)
        let inv_m = T::one() / T::from_usize(count).unwrap();
        let scale: Vec<T> = gamma.data().iter().zip(&saved.inv_std).map(|(&g, &s)| g * s).collect();
        let mean_db: Vec<T> = dbeta.iter().map(|&v| v * inv_m).collect();
        let mean_dg: Vec<T> = dgamma.iter().map(|&v| v * inv_m).collect();
        for ((out, row), hrow) in dx.chunks_exact_mut(c).zip(dy.data().chunks_exact(c)).zip(saved.xhat.chunks_exact(c)) {
            for (((((o, &d), &h), &sc), &mb), &mg) in
                out.iter_mut().zip(row).zip(hrow).zip(&scale).zip(&mean_db).zip(&mean_dg)
            {
                *o = sc * (d - mb - h * mg);
            }
        }
    } else {
        let scale: Vec<T> = gamma.data().iter().zip(&saved.inv_std).map(|(&g, &s)| g * s).collect();
        for (out, row) in dx.chunks_exact_mut(c).zip(dy.data().chunks_exact(c)) {
            for ((o, &d), &sc) in out.iter_mut().zip(row).zip(&scale) {
                *o = d * sc;
            }
        }
    }
    BnGrads {
        dx: Tensor::from_parts(dy.shape().to_vec(), dx),
        dgamma: Tensor::from_parts(vec![c], dgamma),
        dbeta: Tensor::from_parts(vec![c], dbeta),
    }
}

/// Forward-only batch normalization; training mode updates `p.stats`.
pub fn batchnorm<T: Scalar>(x: &Tensor<T>, p: &mut BatchNormParams<T>) -> Result<Tensor<T>> {
    let f = batchnorm_forward(x, &p.gamma, &p.beta, &p.stats, p.mode)?;
    if p.mode == Mode::Training {
        p.stats.update(&f.batch_mean, &f.batch_var);
    }
    Ok(f.out)
}
