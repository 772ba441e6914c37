//! Episode data: the toy sequence tasks, bAbI ingestion, and a flat binary
//! cache for generated samples.

pub mod babi;
pub mod cache;
mod toy;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use babi::{babi_encode, BabiCorpus, BabiFile, BabiSplit, Question, Story, Vocabulary, BABI_TASKS};
pub use toy::{
    build_toy, encode_repeat_count, gen_toy, priority_key, ToyTask, ToyTaskSpec, CONTENT_BITS,
    END_CHANNEL, TOY_INPUT,
};

/// One episode: per-step inputs and targets plus the loss mask.
///
/// All three sequences share one horizon; targets are zero where the mask is
/// false.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl TaskSample {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    /// Targets at masked steps, in order.
    pub fn masked_targets(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.targets
            .iter()
            .enumerate()
            .filter(|(t, _)| self.mask[*t])
            .map(|(t, y)| (t, y.as_slice()))
    }
}

/// Which fixed stream a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
    Probe,
}

const STREAM_INIT: u64 = 0;

/// Generator for sample `index` of `split` under `seed`; independent of
/// how many samples were drawn before it.
pub fn sample_rng(seed: u64, split: Split, index: u64) -> ChaCha8Rng {
    let tag = match split {
        Split::Train => 1u64,
        Split::Validation => 2,
        Split::Test => 3,
        Split::Probe => 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) | (index & ((1 << 48) - 1)));
    rng
}

/// Generator used for parameter initialization under `seed`.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);
    rng
}
