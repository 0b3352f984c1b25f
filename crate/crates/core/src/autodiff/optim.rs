use super::array::Array;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn adam(learning_rate: f64, n_params: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            ..Self::sgd(learning_rate)
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                op: "optimizer_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        self.begin(params.len())?;
        self.update(0, params, grads);
        Ok(())
    }

    /// Step over a list of tensors laid out back to back; a missing
    /// gradient counts as zero.
    pub fn step_tensors(&mut self, params: &mut [Array], grads: &[Option<&Array>]) -> Result<()> {
        let n: usize = params.iter().map(Array::len).sum();
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| g.is_some_and(|g| g.shape() != p.shape()))
        {
            return Err(Error::Shape {
                op: "optimizer_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        self.begin(n)?;
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let len = p.len();
            match g {
                Some(g) => self.update(offset, p.data_mut(), g.data()),
                None if self.kind == OptimizerKind::Adam => {
                    self.update(offset, p.data_mut(), &vec![0.0; len]);
                }
                None => {}
            }
            offset += len;
        }
        Ok(())
    }

    fn begin(&mut self, n: usize) -> Result<()> {
        if self.kind == OptimizerKind::Adam && self.m.len() != n {
            return Err(Error::Shape {
                op: "optimizer_step",
                lhs: vec![self.m.len()],
                rhs: vec![n],
            });
        }
        self.step += 1;
        Ok(())
    }

    fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64]) {
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                let m = &mut self.m[offset..offset + params.len()];
                let v = &mut self.v[offset..offset + params.len()];
                for i in 0..params.len() {
                    let g = grads[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}
