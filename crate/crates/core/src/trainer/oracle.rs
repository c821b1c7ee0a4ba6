/// Central-difference gradient of `f` at `x`:
/// `(f(x + h e_k) − f(x − h e_k)) / 2h` for every coordinate `k`.
pub fn finite_diff_oracle(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + step;
            let up = f(&probe);
            probe[k] = orig - step;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Default probe step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
