//! Small shared helpers: stable seed derivation and a bounded worker pool.

/// Derive a child seed from a base seed and a stream index.
///
/// splitmix64 finalizer; stable across platforms and releases, unlike the
/// standard library hashers.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a textual stream name.
pub fn mix_seed_str(base: u64, name: &str) -> u64 {
    let mut acc = base;
    for &b in name.as_bytes() {
        acc = mix_seed(acc, b as u64 + 1);
    }
    acc
}

/// Deterministic bounded-pool map: applies `f` to every index in `0..n` using
/// at most `workers` threads and returns results in index order, identical to
/// the sequential result for any worker count.
pub fn bounded_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    if workers == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, slot_chunk) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let start = w * chunk;
                for (off, slot) in slot_chunk.iter_mut().enumerate() {
                    *slot = Some(f(start + off));
                }
            });
        }
    });
    out.into_iter().map(|s| s.expect("every slot filled")).collect()
}
