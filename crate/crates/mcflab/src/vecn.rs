//! Small fixed-size vector helpers for ambient dimensions 2 and 3.
//!
//! Ambient vectors are stored as `[f64; 3]` with trailing components zeroed
//! for n = 2, so dot products and norms are dimension-agnostic.

pub type VecN = [f64; 3];

pub const ZERO: VecN = [0.0; 3];

#[inline]
pub fn dot(a: VecN, b: VecN) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: VecN) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn scale(a: VecN, s: f64) -> VecN {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn add(a: VecN, b: VecN) -> VecN {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: VecN, b: VecN) -> VecN {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Spectral norm of a symmetric matrix stored as a padded 3x3; only the
/// leading `dim`x`dim` block is read. `dim` is 1 or 2 in practice.
pub fn sym_spectral_norm(m: &[[f64; 3]; 3], dim: usize) -> f64 {
    match dim {
        1 => m[0][0].abs(),
        2 => {
            let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
            let half_tr = 0.5 * (a + c);
            let disc = (0.5 * (a - c)).powi(2) + b * b;
            let r = disc.max(0.0).sqrt();
            (half_tr + r).abs().max((half_tr - r).abs())
        }
        _ => panic!("sym_spectral_norm: dim must be 1 or 2"),
    }
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym2_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let half_tr = 0.5 * (a + c);
    let r = ((0.5 * (a - c)).powi(2) + b * b).max(0.0).sqrt();
    (half_tr - r, half_tr + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_matches_eigenvalues() {
        let m = [[2.0, 1.0, 0.0], [1.0, -3.0, 0.0], [0.0, 0.0, 0.0]];
        let (lo, hi) = sym2_eigenvalues(2.0, 1.0, -3.0);
        let expect = lo.abs().max(hi.abs());
        assert!((sym_spectral_norm(&m, 2) - expect).abs() < 1e-14);
    }
}
