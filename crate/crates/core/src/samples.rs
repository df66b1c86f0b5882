use nalgebra::DVector;

/// A set of generated or inpainted vectors with the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<DVector<f64>>,
    /// Ground-truth latents, when known.
    pub latents: Option<Vec<DVector<f64>>>,
    pub seed: u64,
}

impl SampleBatch {
    pub fn new(samples: Vec<DVector<f64>>, latents: Option<Vec<DVector<f64>>>, seed: u64) -> Self {
        Self {
            samples,
            latents,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
