//! Bounded worker pool with deterministic work assignment.

/// Environment variable holding the worker count. Defaults to 1.
pub const THREADS_ENV: &str = "SBM_THREADS";

pub fn count() -> usize {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

/// Applies `f` to every item and returns results in input order. Item `i`
/// goes to worker `i % workers`, so the output never depends on timing.
pub fn map<I: Sync, O: Send, E: Send>(
    items: &[I],
    workers: usize,
    f: impl Fn(&I) -> Result<O, E> + Sync,
) -> Result<Vec<O>, E> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let f = &f;
    let parts: Vec<Vec<(usize, Result<O, E>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || items.iter().enumerate().skip(w).step_by(workers).map(|(i, x)| (i, f(x))).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut slots: Vec<Option<Result<O, E>>> = (0..items.len()).map(|_| None).collect();
    for (i, r) in parts.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every item assigned")).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn order_is_preserved() {
        let items: Vec<u32> = (0..37).collect();
        for w in [1, 2, 5, 64] {
            let out: Vec<u32> = super::map(&items, w, |&x| Ok::<_, ()>(x * x)).unwrap();
            assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
        }
        assert_eq!(super::map(&items, 3, |&x| if x == 7 { Err(x) } else { Ok(x) }), Err(7));
    }
}
