//! Small text helpers shared by the mock backends and the toy encoder.

/// Lowercased alphanumeric word runs.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Collapse every whitespace run to one space and trim.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First sentence: everything up to and including the first `.`, `?` or `!`.
pub fn first_sentence(text: &str) -> &str {
    match text.find(['.', '?', '!']) {
        Some(i) => &text[..=i],
        None => text,
    }
}

/// 64-bit FNV-1a keyed by `seed`. Stable across platforms and releases,
/// which `std::hash` is not.
pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
