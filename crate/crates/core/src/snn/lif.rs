use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};
use crate::train::surrogate_sigma;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reset {
    /// Subtract the threshold after a spike.
    Subtract,
    /// Set the membrane to zero after a spike.
    Zero,
}

/// Current-based leaky integrate-and-fire parameters, per time step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifConfig {
    /// Synaptic current decay.
    pub alpha: f64,
    /// Membrane decay.
    pub beta: f64,
    pub theta: f64,
    pub reset: Reset,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self { alpha: 0.8, beta: 0.9, theta: 1.0, reset: Reset::Subtract }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !((0.0..=1.0).contains(&self.alpha) && (0.0..=1.0).contains(&self.beta)) {
            return Err(Error::Config("LIF decays must lie in [0, 1]".into()));
        }
        if !(self.theta > 0.0) {
            return Err(Error::Config("LIF threshold must be positive".into()));
        }
        Ok(())
    }
}

/// How the forward pass turns membrane potential into spikes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpikeFn {
    /// Heaviside step.
    Hard,
    /// The arctangent surrogate itself, making the network smooth end to end.
    Smooth { slope: f64 },
}

impl SpikeFn {
    #[inline]
    pub fn fire<F: Real>(self, u: F, theta: F) -> F {
        match self {
            SpikeFn::Hard => {
                if u >= theta {
                    F::one()
                } else {
                    F::zero()
                }
            }
            SpikeFn::Smooth { slope } => surrogate_sigma(u, theta, F::lit(slope)),
        }
    }
}

/// Synaptic current and membrane potential of a population.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState<F = f32> {
    pub i: Vec<F>,
    pub u: Vec<F>,
}

impl<F: Real> LifState<F> {
    pub fn zeros(n: usize) -> Self {
        Self { i: vec![F::zero(); n], u: vec![F::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// One LIF update, writing the pre-reset membrane into `u_pre` and the spikes
/// into `spikes`:
///
/// ```text
/// i' = alpha·i + input
/// u_pre = beta·u + i'
/// s = fire(u_pre)
/// u' = u_pre - theta·s        (subtract)
///      u_pre·(1 - s)          (zero)
/// ```
pub(crate) fn lif_update<F: Real>(
    state: &mut LifState<F>,
    input: &[F],
    cfg: &LifConfig,
    spike_fn: SpikeFn,
    u_pre: &mut [F],
    spikes: &mut [F],
) {
    let (alpha, beta, theta) = (F::lit(cfg.alpha), F::lit(cfg.beta), F::lit(cfg.theta));
    for j in 0..input.len() {
        let i = alpha * state.i[j] + input[j];
        let up = beta * state.u[j] + i;
        let s = spike_fn.fire(up, theta);
        state.i[j] = i;
        state.u[j] = match cfg.reset {
            Reset::Subtract => up - theta * s,
            Reset::Zero => up * (F::one() - s),
        };
        u_pre[j] = up;
        spikes[j] = s;
    }
}

/// Advances `state` by one step with hard spikes and returns them.
pub fn lif_step<F: Real>(state: &mut LifState<F>, input: &[F], cfg: &LifConfig) -> Result<Vec<F>> {
    if input.len() != state.len() {
        return Err(Error::shape(format!("{} inputs for {} neurons", input.len(), state.len())));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite LIF input".into()));
    }
    let mut u_pre = vec![F::zero(); input.len()];
    let mut spikes = vec![F::zero(); input.len()];
    lif_update(state, input, cfg, SpikeFn::Hard, &mut u_pre, &mut spikes);
    Ok(spikes)
}
