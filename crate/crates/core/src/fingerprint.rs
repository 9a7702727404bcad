//! Stable content fingerprints for cache validation.
//!
//! Cached artifacts (mode sets, checkpoints, exported tables) embed a
//! fingerprint of every input that influenced them; a mismatch on reload
//! forces recomputation. FNV-1a is enough here — this guards against
//! stale configuration, not adversaries.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Fingerprint of any serializable value via its canonical JSON form.
pub fn of_value<T: serde::Serialize>(value: &T) -> u64 {
    let json = serde_json::to_string(value).expect("fingerprintable values serialize");
    fnv1a64(json.as_bytes())
}

pub fn to_hex(fp: u64) -> String {
    format!("{fp:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        // FNV-1a("hello") reference value.
        assert_eq!(fnv1a64(b"hello"), 0xa430d84680aabd0b);
    }

    #[test]
    fn any_field_change_changes_fingerprint() {
        #[derive(serde::Serialize)]
        struct Cfg {
            a: u32,
            b: f64,
        }
        let base = of_value(&Cfg { a: 1, b: 2.0 });
        assert_ne!(base, of_value(&Cfg { a: 2, b: 2.0 }));
        assert_ne!(base, of_value(&Cfg { a: 1, b: 2.5 }));
        assert_eq!(base, of_value(&Cfg { a: 1, b: 2.0 }));
    }
}
