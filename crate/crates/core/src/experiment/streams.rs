use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named random streams of one run. Each stream is an independent ChaCha
/// stream keyed by `(seed, stream, step)`, so drawing more numbers from one
/// stream never shifts another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Datagen,
    Split,
    Init,
    Shuffle,
    Dropout,
    /// MC-Dropout passes used to score the pool.
    McSelect,
    /// MC-Dropout passes used for the test-set epistemic gap.
    McEval,
    /// Uniform and balanced-uniform selection.
    Selection,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Datagen => 1,
            Stream::Split => 2,
            Stream::Init => 3,
            Stream::Shuffle => 4,
            Stream::Dropout => 5,
            Stream::McSelect => 6,
            Stream::McEval => 7,
            Stream::Selection => 8,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn rng(&self, stream: Stream, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((stream.id() << 32) | step as u64);
        rng
    }

    /// A 64-bit seed value drawn from `stream` at step 0.
    pub fn derive_seed(&self, stream: Stream) -> u64 {
        self.rng(stream, 0).next_u64()
    }
}
