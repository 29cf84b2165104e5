use rand::seq::index;
use rand::Rng;

/// Upper end of the repeat-count range for a text of `len` tokens:
/// `max(2, floor(rate * len))`, capped at `len`.
pub fn max_repeats(len: usize, rate: f64) -> usize {
    let bound = ((rate * len as f64).floor() as usize).max(2);
    bound.min(len)
}

/// Word-repetition augmentation: draws `k` uniformly from
/// `0..=max_repeats(len, rate)`, picks `k` distinct positions uniformly, and
/// duplicates each chosen token in place.
pub fn word_repetition<R: Rng + ?Sized>(tokens: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    let n = tokens.len();
    if n == 0 {
        return Vec::new();
    }
    let k = rng.gen_range(0..=max_repeats(n, rate));
    let mut positions = index::sample(rng, n, k).into_vec();
    positions.sort_unstable();
    repeat_positions(tokens, &positions)
}

/// Duplicates the tokens at the given sorted, distinct positions.
pub fn repeat_positions(tokens: &[usize], positions: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(tokens.len() + positions.len());
    let mut next = positions.iter().peekable();
    for (i, &t) in tokens.iter().enumerate() {
        out.push(t);
        if next.peek() == Some(&&i) {
            out.push(t);
            next.next();
        }
    }
    out
}
