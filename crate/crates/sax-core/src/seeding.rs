//! Deterministic seed derivation so independent random streams never share
//! state and never depend on draw order elsewhere.

/// One round of the splitmix64 output function.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a base seed and two stream labels. The same
/// inputs always produce the same child, and distinct labels decorrelate.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ a.wrapping_mul(0xd1342543de82ef95)) ^ b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    }

    #[test]
    fn distinct_labels_decorrelate() {
        let s = derive_seed(7, 0, 0);
        assert_ne!(s, derive_seed(7, 0, 1));
        assert_ne!(s, derive_seed(7, 1, 0));
        assert_ne!(s, derive_seed(8, 0, 0));
    }
}
