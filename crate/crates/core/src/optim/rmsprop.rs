use crate::error::{Error, Result};

/// RMSProp accumulator for one parameter buffer.
///
/// `C ← ρC + (1−ρ) g⊙g`, `θ ← θ − ε/√(δ + C) ⊙ g`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmspropState {
    pub accum: Vec<f64>,
    pub rho: f64,
    pub lr: f64,
    pub delta: f64,
}

impl RmspropState {
    pub fn new(len: usize, lr: f64, rho: f64, delta: f64) -> Self {
        RmspropState {
            accum: vec![0.0; len],
            rho,
            lr,
            delta,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.accum.len() || grad.len() != self.accum.len() {
            return Err(Error::Dimension(format!(
                "RMSProp state of length {} for params {} and gradient {}",
                self.accum.len(),
                params.len(),
                grad.len()
            )));
        }
        for ((c, p), &g) in self.accum.iter_mut().zip(params.iter_mut()).zip(grad) {
            *c = self.rho * *c + (1.0 - self.rho) * g * g;
            *p -= self.lr / (self.delta + *c).sqrt() * g;
        }
        Ok(())
    }
}
