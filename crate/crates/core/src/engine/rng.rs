//! Seeded per-purpose random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from the master seed,
//! so two runs that differ only in policy see the same arrivals and session plans.

use rand::distr::OpenClosed01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const ARRIVALS: u64 = 1;
const THINK: u64 = 2;
const ADMISSION: u64 = 3;
const SESSION_PLAN: u64 = 4;
const BENCHMARK: u64 = 5;
const SERVICE_BASE: u64 = 100;

/// Independent random streams used by one simulation run.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub arrivals: SimRng,
    pub service: Vec<SimRng>,
    pub think: SimRng,
    pub admission: SimRng,
    pub session_plan: SimRng,
    pub benchmark: SimRng,
}

impl RngStreams {
    pub fn new(master_seed: u64, tiers: usize) -> Self {
        RngStreams {
            arrivals: stream(master_seed, ARRIVALS),
            service: (0..tiers as u64)
                .map(|i| stream(master_seed, SERVICE_BASE + i))
                .collect(),
            think: stream(master_seed, THINK),
            admission: stream(master_seed, ADMISSION),
            session_plan: stream(master_seed, SESSION_PLAN),
            benchmark: stream(master_seed, BENCHMARK),
        }
    }
}

fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Uniform draw on (0, 1].
pub fn uniform_open_closed<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(OpenClosed01)
}

/// Inverse-transform exponential sample `-mean * ln(u)` for a given `u` in (0, 1].
///
/// `u = 1` maps to the smallest positive float rather than zero.
pub fn exponential_from_uniform(u: f64, mean: f64) -> f64 {
    (-mean * u.ln()).max(f64::MIN_POSITIVE)
}

/// Exponential sample with the given mean; always strictly positive.
pub fn draw_exponential<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    debug_assert!(mean > 0.0);
    exponential_from_uniform(uniform_open_closed(rng), mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_uniform_maps_to_zero_plus() {
        let x = exponential_from_uniform(1.0, 3.0);
        assert!(x > 0.0 && x < 1e-300);
    }

    #[test]
    fn sample_mean_within_one_percent() {
        let mut rng = stream(7, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| draw_exponential(&mut rng, 1.0)).sum::<f64>() / n as f64;
        // std error of the mean is 1e-3, so 1% is ten standard errors
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn tiny_mean_stays_positive() {
        let mut rng = stream(11, 0);
        assert!((0..100_000).all(|_| draw_exponential(&mut rng, 0.001) > 0.0));
    }

    #[test]
    fn streams_are_independent_of_interleaving() {
        let mut a = RngStreams::new(99, 3);
        let mut b = RngStreams::new(99, 3);
        let first: Vec<f64> = (0..5).map(|_| uniform_open_closed(&mut a.arrivals)).collect();
        // consume other streams in b before touching arrivals
        for _ in 0..17 {
            uniform_open_closed(&mut b.think);
            uniform_open_closed(&mut b.service[2]);
        }
        let second: Vec<f64> = (0..5).map(|_| uniform_open_closed(&mut b.arrivals)).collect();
        assert_eq!(first, second);
        assert_ne!(
            uniform_open_closed(&mut a.think),
            uniform_open_closed(&mut a.admission)
        );
    }
}
