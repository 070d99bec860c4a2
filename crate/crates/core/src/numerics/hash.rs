use sha2::{Digest, Sha256};

/// SHA-256 over labelled `f64` slices (little-endian bit patterns).
///
/// Labels and lengths are mixed in so that moving values between tensors
/// changes the digest.
pub struct ContentHasher {
    inner: Sha256,
}

impl Default for ContentHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl ContentHasher {
    pub fn new() -> Self {
        Self {
            inner: Sha256::new(),
        }
    }

    pub fn tensor(&mut self, label: &str, values: &[f64]) -> &mut Self {
        self.inner.update((label.len() as u64).to_le_bytes());
        self.inner.update(label.as_bytes());
        self.inner.update((values.len() as u64).to_le_bytes());
        for v in values {
            self.inner.update(v.to_bits().to_le_bytes());
        }
        self
    }

    pub fn bytes(&mut self, label: &str, data: &[u8]) -> &mut Self {
        self.inner.update((label.len() as u64).to_le_bytes());
        self.inner.update(label.as_bytes());
        self.inner.update((data.len() as u64).to_le_bytes());
        self.inner.update(data);
        self
    }

    pub fn finish(self) -> String {
        self.inner
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
