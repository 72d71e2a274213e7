use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::DiffusionModel;
use crate::error::Result;
use crate::exec::Policy;

/// Closed-loop adapter: one ancestral sample per chunk.
///
/// A delay-unaware model ignores the delay it is given.
#[derive(Debug, Clone)]
pub struct DiffusionPolicy {
    model: Arc<DiffusionModel>,
    rng: ChaCha8Rng,
}

impl DiffusionPolicy {
    pub fn new(model: Arc<DiffusionModel>, seed: u64) -> Self {
        DiffusionPolicy {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for DiffusionPolicy {
    fn act(&mut self, obs: &[Vec<f64>], delta: f64) -> Result<Option<Vec<Vec<f64>>>> {
        let cond = self.model.conditioning(obs, delta);
        self.model.sample(&cond, &mut self.rng).map(Some)
    }
}
