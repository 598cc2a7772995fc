//! Adaptive-moment optimizer operating on parameter leaves.

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Adam with bias correction. The learning rate is supplied per step so
/// schedules stay outside the optimizer.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    state: AdamState,
}

/// Everything needed to resume an [`Adam`] bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Var], beta1: f32, beta2: f32) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(&p.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            state: AdamState {
                step: 0,
                first_moment: zeros.clone(),
                second_moment: zeros,
            },
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn load_state(&mut self, state: AdamState) -> Result<()> {
        let same = state.first_moment.len() == self.state.first_moment.len()
            && state
                .first_moment
                .iter()
                .chain(state.second_moment.iter())
                .zip(self.state.first_moment.iter().chain(self.state.second_moment.iter()))
                .all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.state = state;
        Ok(())
    }

    pub fn step(&mut self, params: &[Var], grads: &[Tensor], lr: f32) -> Result<()> {
        if params.len() != self.state.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam step with {} params, {} grads, {} slots",
                params.len(),
                grads.len(),
                self.state.first_moment.len()
            )));
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let value = p.value();
            if g.shape() != value.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    value.shape()
                )));
            }
            let m_prev = self.state.first_moment[i].data();
            let v_prev = self.state.second_moment[i].data();
            let mut m = Vec::with_capacity(g.numel());
            let mut v = Vec::with_capacity(g.numel());
            let mut next = Vec::with_capacity(g.numel());
            for j in 0..g.numel() {
                let gj = g.data()[j];
                let mj = b1 * m_prev[j] + (1.0 - b1) * gj;
                let vj = b2 * v_prev[j] + (1.0 - b2) * gj * gj;
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + self.eps);
                next.push(value.data()[j] - update);
                m.push(mj);
                v.push(vj);
            }
            self.state.first_moment[i] = Tensor::new(g.shape().to_vec(), m)?;
            self.state.second_moment[i] = Tensor::new(g.shape().to_vec(), v)?;
            p.set_value(Tensor::new(value.shape().to_vec(), next)?)?;
        }
        Ok(())
    }
}
