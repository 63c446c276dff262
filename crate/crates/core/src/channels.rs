//! Bernoulli packet-dropout links between plant and controller.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of a run's master seed. Each stream is an independent
/// ChaCha keystream, so draws on one never shift another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Sensor,
    Actuator,
    Identifier,
    Critic,
    Actor,
    Gradcheck,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Sensor => 1,
            Stream::Actuator => 2,
            Stream::Identifier => 3,
            Stream::Critic => 4,
            Stream::Actor => 5,
            Stream::Gradcheck => 6,
        }
    }
}

/// Deterministic generator for one named sub-stream of `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// A lossy link that passes each packet with probability `p_pass`.
#[derive(Clone, Debug)]
pub struct DropoutChannel {
    p_pass: f64,
    rng: ChaCha8Rng,
}

impl DropoutChannel {
    /// # Panics
    /// If `p_pass` is outside `[0, 1]`. Configs are validated before this point.
    pub fn new(p_pass: f64, rng: ChaCha8Rng) -> Self {
        assert!(
            (0.0..=1.0).contains(&p_pass),
            "pass probability {p_pass} outside [0, 1]"
        );
        Self { p_pass, rng }
    }

    pub fn seeded(p_pass: f64, seed: u64, stream: Stream) -> Self {
        Self::new(p_pass, stream_rng(seed, stream))
    }

    pub fn p_pass(&self) -> f64 {
        self.p_pass
    }

    /// 1 with probability `p_pass`, else 0.
    pub fn sample(&mut self) -> u8 {
        // random::<f64>() is in [0, 1), so p = 1 always passes and p = 0 never does
        u8::from(self.rng.random::<f64>() < self.p_pass)
    }

    /// Passes `signal` through unchanged or replaces it with zeros.
    pub fn apply(&mut self, signal: &DVector<f64>) -> (DVector<f64>, u8) {
        let gate = self.sample();
        if gate == 1 {
            (signal.clone(), 1)
        } else {
            (DVector::zeros(signal.len()), 0)
        }
    }
}
