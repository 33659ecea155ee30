//! Training-time machinery: Adam, the 1cycle schedule, and stochastic
//! weight averaging.

use crate::numerics::Tensor;
use crate::scalar::Scalar;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimError {
    /// A parameter arrived without a populated gradient.
    MissingGrad { name: String },
    /// Parameter count or shape changed between calls.
    ShapeDrift { name: String },
    /// Schedule queried past its horizon.
    StepOutOfRange { step: u64, total: u64 },
    /// SWA finalized before any snapshot was folded in.
    EmptyAverage,
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingGrad { name } => write!(f, "parameter '{name}' has no gradient"),
            Self::ShapeDrift { name } => {
                write!(f, "parameter '{name}' changed shape between optimizer calls")
            }
            Self::StepOutOfRange { step, total } => {
                write!(f, "schedule step {step} exceeds total {total}")
            }
            Self::EmptyAverage => write!(f, "weight average finalized with zero snapshots"),
        }
    }
}

impl std::error::Error for OptimError {}

/// First/second-moment buffers plus the shared step counter.
///
/// Buffers are allocated lazily on the first update so the state does not
/// need the parameter shapes up front; afterwards they must stay fixed.
pub struct AdamState<E: Scalar> {
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<E: Scalar> AdamState<E> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn with_defaults() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place. Every parameter must carry a
/// gradient; parameter order and shapes must match across calls.
pub fn adam_step<E: Scalar>(
    params: &mut [(String, &mut Tensor<E>)],
    state: &mut AdamState<E>,
    lr: f64,
) -> Result<(), OptimError> {
    if state.m.is_empty() {
        for (_, p) in params.iter() {
            state.m.push(vec![E::zero(); p.numel()]);
            state.v.push(vec![E::zero(); p.numel()]);
        }
    }
    if state.m.len() != params.len() {
        return Err(OptimError::ShapeDrift {
            name: format!("parameter count {} vs {}", params.len(), state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step;
    let b1 = E::from_f64(state.beta1);
    let b2 = E::from_f64(state.beta2);
    let one_m_b1 = E::from_f64(1.0 - state.beta1);
    let one_m_b2 = E::from_f64(1.0 - state.beta2);
    let bc1 = E::from_f64(1.0 - state.beta1.powi(t as i32));
    let bc2 = E::from_f64(1.0 - state.beta2.powi(t as i32));
    let eps = E::from_f64(state.eps);
    let lr_e = E::from_f64(lr);
    for (idx, (name, p)) in params.iter_mut().enumerate() {
        if state.m[idx].len() != p.numel() {
            return Err(OptimError::ShapeDrift { name: name.clone() });
        }
        let grad = p
            .grad()
            .ok_or_else(|| OptimError::MissingGrad { name: name.clone() })?
            .to_vec();
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let data = p.data_mut();
        for j in 0..data.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + one_m_b1 * g;
            v[j] = b2 * v[j] + one_m_b2 * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= lr_e * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// 1cycle learning-rate schedule: cosine warmup from `max_lr/div_factor` to
/// `max_lr`, then cosine annealing down to `max_lr/(div_factor *
/// final_div_factor)`.
#[derive(Debug, Clone)]
pub struct OneCycleSchedule {
    pub max_lr: f64,
    pub total_steps: u64,
    pub warmup_frac: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycleSchedule {
    /// warmup_frac = 0.3, div_factor = 25, final_div_factor = 1e4.
    pub fn with_defaults(max_lr: f64, total_steps: u64) -> Self {
        OneCycleSchedule {
            max_lr,
            total_steps,
            warmup_frac: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.max_lr / (self.div_factor * self.final_div_factor)
    }

    /// Learning rate at an integer step in `[0, total_steps]`.
    ///
    /// Both phases are written as convex combinations so the endpoints land
    /// exactly on `initial_lr`, `max_lr`, and `final_lr`.
    pub fn lr_at(&self, step: u64) -> Result<f64, OptimError> {
        if step > self.total_steps {
            return Err(OptimError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        let peak = self.warmup_frac * self.total_steps as f64;
        let s = step as f64;
        Ok(if s <= peak {
            let u = 0.5 * (1.0 - (std::f64::consts::PI * s / peak).cos());
            self.initial_lr() * (1.0 - u) + self.max_lr * u
        } else {
            let t = (s - peak) / (self.total_steps as f64 - peak);
            let u = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
            self.final_lr() * (1.0 - u) + self.max_lr * u
        })
    }
}

/// Running arithmetic mean of parameter snapshots.
///
/// Accumulates in f64 regardless of the training dtype so the average is
/// order-stable to well below test tolerances.
pub struct SwaState {
    sums: Vec<Vec<f64>>,
    count: u64,
    pub swa_lr: f64,
}

impl SwaState {
    pub fn new(swa_lr: f64) -> Self {
        SwaState {
            sums: Vec::new(),
            count: 0,
            swa_lr,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Folds the current parameters into the running mean.
    pub fn update<E: Scalar>(&mut self, params: &[(String, &Tensor<E>)]) -> Result<(), OptimError> {
        if self.sums.is_empty() {
            self.sums = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        }
        if self.sums.len() != params.len() {
            return Err(OptimError::ShapeDrift {
                name: format!("parameter count {} vs {}", params.len(), self.sums.len()),
            });
        }
        for (idx, (name, p)) in params.iter().enumerate() {
            if self.sums[idx].len() != p.numel() {
                return Err(OptimError::ShapeDrift { name: name.clone() });
            }
            for (acc, &v) in self.sums[idx].iter_mut().zip(p.data()) {
                *acc += v.to_f64().expect("finite parameter");
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Returns the averaged snapshot, one flat buffer per parameter.
    pub fn finalize<E: Scalar>(&self) -> Result<Vec<Vec<E>>, OptimError> {
        if self.count == 0 {
            return Err(OptimError::EmptyAverage);
        }
        let inv = 1.0 / self.count as f64;
        Ok(self
            .sums
            .iter()
            .map(|s| s.iter().map(|&v| E::from_f64(v * inv)).collect())
            .collect())
    }
}
