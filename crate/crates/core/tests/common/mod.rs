//! Instance generators shared by the property and acceptance targets.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use puriscope_core::linalg::{outer, trace_norm, CMatrix, CVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_vector<R: Rng>(d: usize, rng: &mut R) -> CVector {
    CVector::from_fn(d, |_, _| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
}

pub fn unit_vector<R: Rng>(d: usize, rng: &mut R) -> CVector {
    let v = gaussian_vector(d, rng);
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

/// Random Hermitian matrix scaled to trace norm `eps`.
pub fn hermitian_with_trace_norm<R: Rng>(d: usize, eps: f64, rng: &mut R) -> CMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)));
    let h = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
    let norm = trace_norm(&h);
    h * Complex64::new(eps / norm, 0.0)
}

/// Density matrix with random eigenbasis and the given spectrum.
pub fn density_with_spectrum<R: Rng>(spectrum: &[f64], rng: &mut R) -> CMatrix {
    let d = spectrum.len();
    let g = DMatrix::from_fn(d, d, |_, _| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)));
    let q = g.qr().q();
    let mut m = CMatrix::zeros(d, d);
    for (j, l) in spectrum.iter().enumerate() {
        let v = q.column(j).into_owned();
        m += outer(&v, &v) * Complex64::new(*l, 0.0);
    }
    m
}

/// Random normalised spectrum of length `d`, sorted descending.
pub fn random_spectrum<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let t: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= t);
    w.sort_by(|a, b| b.partial_cmp(a).unwrap());
    w
}

/// Small rotation of `v` towards a random direction.
pub fn nudge<R: Rng>(v: &CVector, size: f64, rng: &mut R) -> CVector {
    let w = v + gaussian_vector(v.len(), rng) * Complex64::new(size, 0.0);
    let n = w.norm();
    w / Complex64::new(n, 0.0)
}

pub fn p12(a: &CVector, b: &CVector) -> CMatrix {
    let ab = outer(a, b);
    let ba = outer(b, a);
    ab.kronecker(&ba) + ba.kronecker(&ab)
}

pub fn power_trace(m: &CMatrix, t: u32) -> f64 {
    let mut p = m.clone();
    for _ in 1..t {
        p = &p * m;
    }
    p.trace().re
}
