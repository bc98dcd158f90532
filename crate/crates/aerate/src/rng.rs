//! Seeded random streams for reproducible trials.
//!
//! Each trial owns one [`TrialRng`] holding four independent ChaCha streams.
//! Covariates, outcome noise, assignment draws, and coefficient draws each
//! consume their own stream, so two designs run with the same seed see the
//! same environment randomness (same covariates, same potential-outcome
//! noise, same uniform draws) even though their assignment probabilities
//! differ. That coupling is what makes matched-seed regret comparisons
//! meaningful.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STREAM_COVARIATES: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_ASSIGNMENT: u64 = 2;
const STREAM_COEFFICIENTS: u64 = 3;

/// Independent substreams of one seeded trial.
#[derive(Debug, Clone)]
pub struct TrialRng {
    /// Covariate draws (one block per round, fixed draw count).
    pub covariates: ChaCha8Rng,
    /// Potential-outcome noise (both arms drawn every round).
    pub noise: ChaCha8Rng,
    /// The uniform ξ_t used to realize actions.
    pub assignment: ChaCha8Rng,
    /// Dataset-level draws: surface coefficients, fallback covariate matrices.
    pub coefficients: ChaCha8Rng,
}

impl TrialRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            covariates: stream(seed, STREAM_COVARIATES),
            noise: stream(seed, STREAM_NOISE),
            assignment: stream(seed, STREAM_ASSIGNMENT),
            coefficients: stream(seed, STREAM_COEFFICIENTS),
        }
    }
}

fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
