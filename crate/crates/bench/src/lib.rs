//! Fixed random inputs shared by the benchmarks.

use ocrdistill::losses::SeqLabel;
use ocrdistill::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Inputs {
    rng: ChaCha8Rng,
}

impl Inputs {
    pub fn new(seed: u64) -> Self {
        Inputs {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor<f32> {
        Tensor::from_fn(shape, |_| self.rng.gen_range(lo..hi))
    }

    /// `n` labels of length 3..=5 over classes `1..classes`.
    pub fn labels(&mut self, n: usize, classes: usize) -> Vec<SeqLabel> {
        (0..n)
            .map(|_| {
                let len = self.rng.gen_range(3..=5);
                SeqLabel::new((0..len).map(|_| self.rng.gen_range(1..classes)).collect()).expect("non-blank label")
            })
            .collect()
    }
}
