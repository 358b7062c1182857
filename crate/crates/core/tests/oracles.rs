//! Closed-form and brute-force oracles for the scalar building blocks.

use gtgib_core::backbone::decode_link;
use gtgib_core::numerics::nn::{kl_bernoulli, kl_gaussian_std};
use gtgib_core::numerics::{Rng, Tape, Tensor};
use gtgib_core::train::average_precision;

const CASES: usize = 1000;

fn bernoulli_oracle(p: f64, q: f64) -> f64 {
    // cross-entropy minus entropy
    let cross = -(p * q.ln() + (1.0 - p) * (1.0 - q).ln());
    let ent = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
    cross - ent
}

#[test]
fn kl_bernoulli_matches_cross_entropy_form() {
    let mut r = Rng::new(1, 0);
    for _ in 0..CASES {
        let p = 1e-3 + (1.0 - 2e-3) * r.uniform();
        let q = 1e-3 + (1.0 - 2e-3) * r.uniform();
        assert!((kl_bernoulli(p, q) - bernoulli_oracle(p, q)).abs() < 1e-9, "p={p} q={q}");
    }
    assert!(kl_bernoulli(0.3, 0.3).abs() < 1e-15);
}

#[test]
fn kl_bernoulli_tape_op_agrees() {
    let mut r = Rng::new(2, 0);
    let pis: Vec<f64> = (0..CASES).map(|_| 0.01 + 0.98 * r.uniform()).collect();
    let mut t = Tape::default();
    let v = t.constant(Tensor::column(pis.clone()));
    let k = t.kl_bernoulli(v, 0.4);
    for (i, &p) in pis.iter().enumerate() {
        assert!((t.value(k).data()[i] - bernoulli_oracle(p, 0.4)).abs() < 1e-9);
    }
}

fn gaussian_oracle(mu: &[f64], ls: &[f64]) -> f64 {
    mu.iter().zip(ls).map(|(&m, &l)| -l + ((2.0 * l).exp() + m * m - 1.0) / 2.0).sum()
}

/// `∫ p ln(p/q)` by Simpson's rule on a wide grid.
fn gaussian_quadrature(mu: f64, sigma: f64) -> f64 {
    let (a, b, n) = (mu - 12.0 * sigma, mu + 12.0 * sigma, 20_000);
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let z = (x - mu) / sigma;
        let lp = -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let lq = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        lp.exp() * (lp - lq)
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn kl_gaussian_matches_closed_form_and_quadrature() {
    let mut r = Rng::new(3, 0);
    for _ in 0..CASES {
        let k = 1 + r.below(8);
        let mu: Vec<f64> = (0..k).map(|_| 2.0 * r.normal()).collect();
        let ls: Vec<f64> = (0..k).map(|_| r.normal()).collect();
        assert!((kl_gaussian_std(&mu, &ls) - gaussian_oracle(&mu, &ls)).abs() < 1e-9);
    }
    for _ in 0..20 {
        let (mu, ls) = (r.normal(), 0.5 * r.normal());
        assert!((kl_gaussian_std(&[mu], &[ls]) - gaussian_quadrature(mu, ls.exp())).abs() < 1e-9);
    }
    assert_eq!(kl_gaussian_std(&[0.0; 4], &[0.0; 4]), 0.0);
    assert!((kl_gaussian_std(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
}

/// Precision at each positive from pairwise comparisons; ties rank by index.
fn ap_brute_force(scores: &[f64], labels: &[bool]) -> f64 {
    let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut sum = 0.0;
    let mut pos = 0;
    for i in (0..scores.len()).filter(|&i| labels[i]) {
        let rank = 1 + (0..scores.len()).filter(|&j| ahead(j, i)).count();
        let hits = 1 + (0..scores.len()).filter(|&j| labels[j] && ahead(j, i)).count();
        sum += hits as f64 / rank as f64;
        pos += 1;
    }
    sum / pos as f64
}

#[test]
fn average_precision_matches_brute_force() {
    let mut r = Rng::new(4, 0);
    for case in 0..CASES {
        let n = 1 + r.below(30);
        // coarse scores so that ties occur
        let scores: Vec<f64> = (0..n).map(|_| (r.uniform() * 10.0).floor() / 10.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.uniform() < 0.4).collect();
        labels[r.below(n)] = true;
        let ap = average_precision(&scores, &labels).unwrap();
        assert!((ap - ap_brute_force(&scores, &labels)).abs() < 1e-12, "case {case}");
        assert!((0.0..=1.0).contains(&ap));
    }
    let ap = average_precision(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap();
    assert!((ap - 0.833333).abs() < 1e-6);
}

#[test]
fn decode_link_matches_logistic() {
    let mut r = Rng::new(5, 0);
    for _ in 0..CASES {
        let k = 1 + r.below(16);
        let zi: Vec<f64> = (0..k).map(|_| r.normal()).collect();
        let zj: Vec<f64> = (0..k).map(|_| r.normal()).collect();
        let w: Vec<f64> = (0..2 * k).map(|_| r.normal()).collect();
        let b = r.normal();
        let mut s = b;
        for i in 0..k {
            s += zi[i] * w[i] + zj[i] * w[k + i];
        }
        let expect = 1.0 / (1.0 + (-s).exp());
        assert!((decode_link(&zi, &zj, &w, b).unwrap() - expect).abs() < 1e-9);
    }
    assert!((decode_link(&[1.0], &[0.0], &[2.0, -1.0], 0.0).unwrap() - 0.880797).abs() < 1e-6);
    assert_eq!(decode_link(&[0.3, 1.0], &[2.0, -4.0], &[0.0; 4], 0.0).unwrap(), 0.5);
    assert!(decode_link(&[1.0], &[1.0, 2.0], &[0.0; 3], 0.0).is_err());
}
