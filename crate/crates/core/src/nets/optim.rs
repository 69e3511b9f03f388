//! Student/teacher branch state, adaptive-moment optimizer with decoupled
//! weight decay, and the exponential-moving-average teacher update.

use serde::{Deserialize, Serialize};

use super::mlp::MicroNet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::TwoD => write!(f, "2d"),
            Modality::ThreeD => write!(f, "3d"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One modality's student, teacher and optimizer moments. Only the student
/// has moments; the teacher changes solely through [`BranchState::ema_update`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchState {
    pub modality: Modality,
    pub student: MicroNet,
    pub teacher: MicroNet,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl BranchState {
    /// Teacher starts as an exact copy of the student.
    pub fn new(modality: Modality, student: MicroNet) -> Self {
        let n = student.len();
        Self { modality, teacher: student.clone(), student, first_moment: vec![0.0; n], second_moment: vec![0.0; n], step: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.student.len();
        if !self.student.same_shape(&self.teacher) || self.teacher.len() != n || self.first_moment.len() != n || self.second_moment.len() != n {
            return Err(Error::Contract("branch state arrays differ in shape".into()));
        }
        Ok(())
    }

    /// Bias-corrected adaptive-moment step on the student:
    /// `theta <- theta - lr * wd * theta - lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn optimizer_step(&mut self, grad: &[f64], opt: &AdamW) -> Result<()> {
        if grad.len() != self.student.len() {
            return Err(Error::Contract(format!("gradient has {} entries, student has {}", grad.len(), self.student.len())));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite {} gradient at parameter {i}", self.modality)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for (((p, m), v), &g) in self.student.params.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment).zip(grad) {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= opt.lr * opt.weight_decay * *p + opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
        Ok(())
    }

    /// `theta_teacher <- alpha * theta_teacher + (1 - alpha) * theta_student`.
    pub fn ema_update(&mut self, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("EMA alpha {alpha} outside [0, 1]")));
        }
        for (t, &s) in self.teacher.params.iter_mut().zip(&self.student.params) {
            *t = alpha * *t + (1.0 - alpha) * s;
        }
        Ok(())
    }
}
