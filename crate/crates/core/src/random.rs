//! Random instance generators for sweeps, benchmarks and property checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::RealSymMatrix;

/// Counter-based generator for repetition `stream` of a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw by Box-Muller.
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn uniform_vector<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Haar-ish random orthogonal matrix from the QR factors of a Gaussian matrix.
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| normal(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let signs = DVector::from_fn(n, |i, _| if r[(i, i)] < 0.0 { -1.0 } else { 1.0 });
    q * DMatrix::from_diagonal(&signs)
}

/// Random PSD matrix of exact rank `rank` with nonzero eigenvalues drawn
/// from `[lo, hi)`.
pub fn psd_with_rank<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    rank: usize,
    lo: f64,
    hi: f64,
) -> RealSymMatrix {
    let q = orthogonal(rng, dim);
    let mut m = DMatrix::zeros(dim, dim);
    for k in 0..rank.min(dim) {
        let lam = rng.random_range(lo..hi);
        let v = q.column(k);
        m += (v * v.transpose()) * lam;
    }
    RealSymMatrix::new(m).expect("constructed symmetric")
}
