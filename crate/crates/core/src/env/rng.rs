use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Deterministic random stream identified by a master seed and a label.
///
/// The stream seed is `SHA-256(seed_le ‖ label)`, so a given `(seed, label)`
/// pair yields the same sequence on every platform, and streams with
/// different labels are independent of each other's consumption.
#[derive(Debug, Clone)]
pub struct RngStream {
    label: String,
    rng: ChaCha8Rng,
}

/// Serializable position of an [`RngStream`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStreamState {
    pub label: String,
    pub seed: [u8; 32],
    /// ChaCha word position, split into two halves to stay JSON-friendly.
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        RngStream {
            label: label.to_string(),
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn state(&self) -> RngStreamState {
        let pos = self.rng.get_word_pos();
        RngStreamState {
            label: self.label.clone(),
            seed: self.rng.get_seed(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    pub fn from_state(state: &RngStreamState) -> Self {
        let mut rng = ChaCha8Rng::from_seed(state.seed);
        rng.set_word_pos(((state.word_pos_hi as u128) << 64) | state.word_pos_lo as u128);
        RngStream {
            label: state.label.clone(),
            rng,
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
