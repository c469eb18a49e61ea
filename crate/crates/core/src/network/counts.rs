//! Closed-form trainable-parameter counts and the width solver that gives
//! the dense reference network the same budget as a pruned one.

use crate::error::{Error, Result};

/// Trainable parameters of a cupnet:
/// `(k*d + d) + 3h(c + m) + 3(m^2 + m)`.
pub fn param_count_cup(k: u64, d: u64, m: u64, h: u64, c_alpha: u64) -> Result<u64> {
    if k == 0 || m == 0 || h == 0 {
        return Err(Error::InvalidInput("k, m and h must be >= 1".into()));
    }
    if d != 3 * m {
        return Err(Error::InvalidInput(format!("d = {d} must equal 3m = {}", 3 * m)));
    }
    if c_alpha < m || c_alpha > m * m {
        return Err(Error::InvalidInput(format!(
            "mask count {c_alpha} outside [m, m^2] = [{m}, {}]",
            m * m
        )));
    }
    Ok((k * d + d) + 3 * h * (c_alpha + m) + 3 * (m * m + m))
}

/// Trainable parameters of a regnet:
/// `(k*s + s) + h(s^2 + s) + (s*d + d)`.
pub fn param_count_ref(k: u64, d: u64, h: u64, s: u64) -> Result<u64> {
    if k == 0 || d == 0 || h == 0 || s == 0 {
        return Err(Error::InvalidInput("k, d, h and s must be >= 1".into()));
    }
    Ok((k * s + s) + h * (s * s + s) + (s * d + d))
}

/// Smallest width `s >= 1` with `param_count_ref(k, d, h, s) >= n_cup`.
///
/// Evaluates the positive root of `h s^2 + u s + d - n_cup = 0` with
/// `u = k + h + d + 1` and takes its ceiling. The floating-point ceiling is
/// then nudged by exact integer comparisons so the bracketing
/// `n_ref(s - 1) < n_cup <= n_ref(s)` holds even when the root is an integer.
pub fn solve_s(k: u64, d: u64, h: u64, n_cup: u64) -> Result<u64> {
    if k == 0 || d == 0 || h == 0 {
        return Err(Error::InvalidInput("k, d and h must be >= 1".into()));
    }
    if n_cup <= d {
        return Err(Error::InvalidInput(format!("n_cup = {n_cup} must exceed d = {d}")));
    }
    let u = (k + h + d + 1) as f64;
    let hf = h as f64;
    let radicand = u * u - 4.0 * hf * (d as f64 - n_cup as f64);
    if !(radicand >= 0.0) {
        return Err(Error::Internal(format!("negative discriminant {radicand} in width solver")));
    }
    let root = (-u + radicand.sqrt()) / (2.0 * hf);
    let mut s = (root.ceil() as u64).max(1);
    let n_ref = |s| param_count_ref(k, d, h, s);
    while s > 1 && n_ref(s - 1)? >= n_cup {
        s -= 1;
    }
    while n_ref(s)? < n_cup {
        s += 1;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cup_count_anchors() {
        assert_eq!(param_count_cup(9, 5937, 1979, 2, 75_241).unwrap(), 12_277_950);
        assert_eq!(param_count_cup(1, 6, 2, 1, 2).unwrap(), 42);
        assert_eq!(param_count_cup(9, 5937, 1979, 1, 1979 * 1979).unwrap(), 23_569_890);
    }

    #[test]
    fn cup_count_rejects_bad_mask_count() {
        assert!(param_count_cup(1, 6, 2, 1, 1).is_err());
        assert!(param_count_cup(1, 6, 2, 1, 5).is_err());
        assert!(param_count_cup(1, 7, 2, 1, 2).is_err());
    }

    #[test]
    fn ref_count_anchors() {
        assert_eq!(param_count_ref(9, 5937, 3, 2560).unwrap(), 34_898_737);
        assert_eq!(param_count_ref(9, 5937, 3, 2559).unwrap(), 34_877_430);
        assert_eq!(param_count_ref(1, 6, 1, 1).unwrap(), 16);
        assert!(param_count_ref(1, 6, 1, 0).is_err());
    }

    #[test]
    fn solve_s_exact_root() {
        assert_eq!(solve_s(9, 5937, 3, 34_898_737).unwrap(), 2560);
        assert_eq!(solve_s(9, 5937, 3, 34_898_736).unwrap(), 2560);
        assert_eq!(solve_s(9, 5937, 3, 34_898_738).unwrap(), 2561);
    }

    #[test]
    fn solve_s_unit_root() {
        let (k, d, h) = (4, 12, 2);
        let u = k + h + d + 1;
        assert_eq!(solve_s(k, d, h, d + u + h).unwrap(), 1);
        assert_eq!(solve_s(k, d, h, d + 1).unwrap(), 1);
        assert!(solve_s(k, d, h, d).is_err());
    }
}
