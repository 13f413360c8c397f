use sha2::{Digest, Sha256};

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// 128-bit content hash (first 16 bytes of SHA-256) of a sequence of fields.
///
/// Fields are length-prefixed so that ("ab", "c") and ("a", "bc") differ.
pub fn content_id(fields: &[&str]) -> String {
    let mut h = Sha256::new();
    for f in fields {
        h.update((f.len() as u64).to_le_bytes());
        h.update(f.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// Derive a 64-bit seed from a base seed and a list of stream keys.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for k in keys {
        h.update(k.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// 64-bit key of a string, for deriving per-name seeds.
pub fn str_key(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_id_is_length_prefixed() {
        assert_ne!(content_id(&["ab", "c"]), content_id(&["a", "bc"]));
        assert_eq!(content_id(&["x"]).len(), 32);
        assert_eq!(content_id(&["src", "t"]), content_id(&["src", "t"]));
    }

    #[test]
    fn derived_seeds_differ_per_key() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_eq!(derive_seed(7, &[3, 4]), derive_seed(7, &[3, 4]));
    }
}
