use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Clients taking part in one communication round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipationPlan {
    /// Sorted, unique, 0-based client ids.
    pub active: Vec<usize>,
    pub seed: u64,
}

impl ParticipationPlan {
    pub fn full(clients: usize) -> Self {
        ParticipationPlan {
            active: (0..clients).collect(),
            seed: 0,
        }
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        if self.active.is_empty() {
            return Err(Error::Config("participation plan is empty".into()));
        }
        if self.active.windows(2).any(|w| w[0] >= w[1]) || self.active.last().is_some_and(|&i| i >= clients) {
            return Err(Error::Config(format!(
                "participation ids must be unique, sorted and below {clients}"
            )));
        }
        Ok(())
    }
}

/// `⌈fraction·M⌉` distinct clients drawn uniformly without replacement.
pub fn sample_participants(clients: usize, fraction: f64, seed: u64) -> Result<ParticipationPlan> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("participation fraction must lie in (0, 1], got {fraction}")));
    }
    if clients == 0 {
        return Err(Error::Config("no clients to sample".into()));
    }
    let count = ((fraction * clients as f64).ceil() as usize).clamp(1, clients);
    let active = if count == clients {
        (0..clients).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids = rand::seq::index::sample(&mut rng, clients, count).into_vec();
        ids.sort_unstable();
        ids
    };
    Ok(ParticipationPlan { active, seed })
}
