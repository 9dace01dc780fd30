//! Complex dense linear-algebra aliases and the handful of helpers the solvers share.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Draw one standard circularly-symmetric complex Gaussian, CN(0, 1).
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Unit-modulus phasor `exp(j·angle)`.
pub fn phasor(angle: f64) -> C64 {
    C64::from_polar(1.0, angle)
}

/// Largest entry-wise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// `Re{a^H b}`, the real inner product on C^n viewed as R^{2n}.
pub fn real_inner(a: &CVec, b: &CVec) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Row vector `x` (stored as a column) applied to `g`: `Σ x_m g_m` without conjugation.
pub fn row_times(x: &CVec, g: &CVec) -> C64 {
    x.iter().zip(g.iter()).map(|(a, b)| a * b).sum()
}

/// Quadratic form `g^H Q g`, real part (Q is Hermitian).
pub fn quad_form(q: &CMat, g: &CVec) -> f64 {
    g.dotc(&(q * g)).re
}
