use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::{Relation, Scene};

/// Default width of an image feature.
pub const FEATURE_DIM: usize = 64;
/// Slot-wise one-hot width: three object slots of shape(8)+color(6)+size(2),
/// then the relation(4).
pub const ONE_HOT_DIM: usize = 3 * 16 + 4;

/// Fixed-length feature vector of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeature(pub Vec<f64>);

impl ImageFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl std::ops::Deref for ImageFeature {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Attribute indicator vector of a scene, one block per object slot.
pub fn one_hot(scene: &Scene) -> Vec<f64> {
    let mut v = vec![0.0; ONE_HOT_DIM];
    for (slot, o) in scene.objects.iter().enumerate() {
        let base = slot * 16;
        v[base + o.shape as usize] = 1.0;
        v[base + 8 + o.color as usize] = 1.0;
        v[base + 14 + o.size as usize] = 1.0;
    }
    let r = Relation::ALL.iter().position(|&r| r == scene.relation).expect("known relation");
    v[48 + r] = 1.0;
    v
}

/// Frozen random projection of [`one_hot`] plus a fixed bias: the stand-in
/// for a pretrained image encoder whose weights are never updated.
#[derive(Clone, Debug)]
pub struct SceneEncoder {
    seed: u64,
    dim: usize,
    projection: Vec<f64>,
    bias: Vec<f64>,
    noise: Option<f64>,
}

impl SceneEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 8f64.sqrt().recip()).expect("valid sigma");
        let projection = (0..dim * ONE_HOT_DIM).map(|_| normal.sample(&mut rng)).collect();
        let bias = (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        Self {
            seed,
            dim,
            projection,
            bias,
            noise: None,
        }
    }

    /// Adds Gaussian noise of the given standard deviation, seeded per scene
    /// so encoding stays a pure function.
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise = Some(sigma);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encode(&self, scene: &Scene) -> ImageFeature {
        let x = one_hot(scene);
        let mut out = crate::numcore::matvec(&self.projection, self.dim, ONE_HOT_DIM, &x);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        if let Some(sigma) = self.noise {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ scene.scene_id ^ 0x05EE_D0FA_015E);
            let normal = Normal::new(0.0, sigma).expect("valid sigma");
            for o in &mut out {
                *o += normal.sample(&mut rng);
            }
        }
        ImageFeature(out)
    }
}

/// Encodes with a fresh encoder built from `encoder_seed`.
pub fn encode_scene(scene: &Scene, encoder_seed: u64) -> ImageFeature {
    SceneEncoder::new(encoder_seed, FEATURE_DIM).encode(scene)
}
