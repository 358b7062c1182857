//! Exact information-theoretic checks on small finite-alphabet instances.
//!
//! All quantities are in nats.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::Rng;

/// Slack allowed for rounding in every inequality and identity.
pub const TOLERANCE: f64 = 1e-10;

/// Joint probability table over several finite variables, row-major with the
/// last variable varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    shape: Vec<usize>,
    p: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(shape: Vec<usize>, p: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n == 0 || p.len() != n {
            return Err(Error::Shape(format!("table of {} entries for shape {shape:?}", p.len())));
        }
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(DiscreteJoint { shape, p })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for d in (0..self.shape.len()).rev() {
            out[d] = flat % self.shape[d];
            flat /= self.shape[d];
        }
    }

    /// Marginal over `vars`, in the given order.
    pub fn marginal(&self, vars: &[usize]) -> Result<DiscreteJoint> {
        if vars.is_empty() || vars.iter().any(|&v| v >= self.shape.len()) {
            return Err(Error::InvalidArgument(format!("bad variable list {vars:?}")));
        }
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].contains(v) {
                return Err(Error::InvalidArgument(format!("variable {v} repeated")));
            }
        }
        let shape: Vec<usize> = vars.iter().map(|&v| self.shape[v]).collect();
        let mut out = vec![0.0; shape.iter().product()];
        let mut idx = vec![0; self.shape.len()];
        for (flat, &p) in self.p.iter().enumerate() {
            self.unravel(flat, &mut idx);
            let mut k = 0;
            for &v in vars {
                k = k * self.shape[v] + idx[v];
            }
            out[k] += p;
        }
        Ok(DiscreteJoint { shape, p: out })
    }

    /// Joint entropy of `vars`.
    pub fn entropy(&self, vars: &[usize]) -> Result<f64> {
        Ok(entropy(&self.marginal(vars)?.p))
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `I(A; B)` between two disjoint groups of variables, summed directly over
/// the joint table.
pub fn mutual_information(joint: &DiscreteJoint, a: &[usize], b: &[usize]) -> Result<f64> {
    if a.iter().any(|v| b.contains(v)) {
        return Err(Error::InvalidArgument("variable groups overlap".into()));
    }
    let vars: Vec<usize> = a.iter().chain(b).copied().collect();
    let ab = joint.marginal(&vars)?;
    let pa = joint.marginal(a)?;
    let pb = joint.marginal(b)?;
    let nb = pb.p.len();
    let mut i = 0.0;
    for (k, &p) in ab.p.iter().enumerate() {
        if p > 0.0 {
            i += p * (p / (pa.p[k / nb] * pb.p[k % nb])).ln();
        }
    }
    Ok(i.max(0.0))
}

/// Joint of `x → y → z` from `p(x)`, `p(y|x)` (rows indexed by x) and `p(z|y)`.
pub fn markov_chain(px: &[f64], py_x: &[Vec<f64>], pz_y: &[Vec<f64>]) -> Result<DiscreteJoint> {
    let (nx, ny) = (px.len(), pz_y.len());
    let nz = pz_y.first().map_or(0, Vec::len);
    if py_x.len() != nx || py_x.iter().any(|r| r.len() != ny) || pz_y.iter().any(|r| r.len() != nz) {
        return Err(Error::Shape("inconsistent channel dimensions".into()));
    }
    let mut p = Vec::with_capacity(nx * ny * nz);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                p.push(px[x] * py_x[x][y] * pz_y[y][z]);
            }
        }
    }
    DiscreteJoint::new(vec![nx, ny, nz], p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GibbsReport {
    /// `E_p[ln q]`
    pub lhs: f64,
    /// `E_p[ln p]`
    pub rhs: f64,
    pub holds: bool,
}

pub fn gibbs_check(p: &[f64], q: &[f64]) -> Result<GibbsReport> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("{} vs {} outcomes", p.len(), q.len())));
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if !(qi > 0.0) {
                return Err(Error::InvalidArgument("q vanishes on the support of p".into()));
            }
            lhs += pi * qi.ln();
            rhs += pi * pi.ln();
        }
    }
    Ok(GibbsReport { lhs, rhs, holds: lhs <= rhs + TOLERANCE })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DpiReport {
    pub i_xy: f64,
    pub i_xz: f64,
    pub holds: bool,
}

/// Largest deviation of a three-variable joint from `p(x,y)·p(z|y)`.
pub fn markov_residual(chain: &DiscreteJoint) -> Result<f64> {
    if chain.shape.len() != 3 {
        return Err(Error::Shape("expected a joint over three variables".into()));
    }
    let (nx, ny, nz) = (chain.shape[0], chain.shape[1], chain.shape[2]);
    let pxy = chain.marginal(&[0, 1])?;
    let pyz = chain.marginal(&[1, 2])?;
    let py = chain.marginal(&[1])?;
    let mut worst: f64 = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let expect = if py.p[y] > 0.0 { pxy.p[x * ny + y] * pyz.p[y * nz + z] / py.p[y] } else { 0.0 };
                worst = worst.max((chain.p[(x * ny + y) * nz + z] - expect).abs());
            }
        }
    }
    Ok(worst)
}

pub fn dpi_check(chain: &DiscreteJoint) -> Result<DpiReport> {
    let r = markov_residual(chain)?;
    if r > TOLERANCE {
        return Err(Error::InvalidArgument(format!("joint is not Markov (residual {r:e})")));
    }
    let i_xy = mutual_information(chain, &[0], &[1])?;
    let i_xz = mutual_information(chain, &[0], &[2])?;
    Ok(DpiReport { i_xy, i_xz, holds: i_xz <= i_xy + TOLERANCE })
}

/// Label `Y`, structure `S ~ p(s|y)`, nuisance `N` independent of `Y`, graph
/// `G = f(S, N)` and a compressed view `B ~ p(b|g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceConstruction {
    pub p_y: Vec<f64>,
    pub p_s_given_y: Vec<Vec<f64>>,
    pub p_n: Vec<f64>,
    /// `f[s][n]` is the graph outcome.
    pub f: Vec<Vec<usize>>,
    pub n_graphs: usize,
    pub p_b_given_g: Vec<Vec<f64>>,
}

impl NuisanceConstruction {
    /// Joint over `(Y, N, G, B)`.
    pub fn joint(&self) -> Result<DiscreteJoint> {
        let (ny, ns, nn, ng) = (self.p_y.len(), self.p_s_given_y.first().map_or(0, Vec::len), self.p_n.len(), self.n_graphs);
        let nb = self.p_b_given_g.first().map_or(0, Vec::len);
        if self.p_s_given_y.len() != ny
            || self.f.len() != ns
            || self.f.iter().any(|r| r.len() != nn || r.iter().any(|&g| g >= ng))
            || self.p_b_given_g.len() != ng
            || self.p_b_given_g.iter().any(|r| r.len() != nb)
        {
            return Err(Error::Shape("inconsistent construction dimensions".into()));
        }
        let mut p = vec![0.0; ny * nn * ng * nb];
        for y in 0..ny {
            for s in 0..ns {
                for n in 0..nn {
                    let g = self.f[s][n];
                    let w = self.p_y[y] * self.p_s_given_y[y][s] * self.p_n[n];
                    for b in 0..nb {
                        p[((y * nn + n) * ng + g) * nb + b] += w * self.p_b_given_g[g][b];
                    }
                }
            }
        }
        let total: f64 = p.iter().sum();
        // renormalize away accumulated rounding
        p.iter_mut().for_each(|x| *x /= total);
        DiscreteJoint::new(vec![ny, nn, ng, nb], p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NuisanceReport {
    pub i_b_n: f64,
    pub i_b_g: f64,
    pub i_b_y: f64,
    /// `I(B;G) − I(B;Y) − I(B;N)`; non-negative when the inequality holds.
    pub slack: f64,
    pub holds: bool,
}

/// Checks `I(B; N) ≤ I(B; G) − I(B; Y)` by exact enumeration.
pub fn nuisance_invariance_check(c: &NuisanceConstruction) -> Result<NuisanceReport> {
    let j = c.joint()?;
    let i_yn = mutual_information(&j, &[0], &[1])?;
    if i_yn > TOLERANCE {
        return Err(Error::InvalidArgument(format!("nuisance depends on the label (I = {i_yn:e})")));
    }
    let i_b_n = mutual_information(&j, &[3], &[1])?;
    let i_b_g = mutual_information(&j, &[3], &[2])?;
    let i_b_y = mutual_information(&j, &[3], &[0])?;
    let slack = i_b_g - i_b_y - i_b_n;
    Ok(NuisanceReport { i_b_n, i_b_g, i_b_y, slack, holds: slack >= -TOLERANCE })
}

// ---------------------------------------------------------------------------
// random instances

/// Random distribution; each entry is zeroed with probability `sparsity`
/// (at least one entry stays positive).
pub fn random_distribution(n: usize, sparsity: f64, rng: &mut Rng) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.exponential(1.0)).collect();
    let keep = rng.below(n);
    for (i, x) in p.iter_mut().enumerate() {
        if i != keep && rng.uniform() < sparsity {
            *x = 0.0;
        }
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

fn random_channel(rows: usize, cols: usize, sparsity: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..rows).map(|_| random_distribution(cols, sparsity, rng)).collect()
}

pub fn random_markov_chain(alphabet: usize, rng: &mut Rng) -> Result<DiscreteJoint> {
    let px = random_distribution(alphabet, 0.2, rng);
    let pyx = random_channel(alphabet, alphabet, 0.2, rng);
    let pzy = random_channel(alphabet, alphabet, 0.2, rng);
    markov_chain(&px, &pyx, &pzy)
}

/// 2-bit structure and nuisance, binary label, a random map onto up to 16
/// graph outcomes and a random 4-symbol channel.
pub fn random_construction(rng: &mut Rng) -> NuisanceConstruction {
    let n_graphs = 1 + rng.below(16);
    NuisanceConstruction {
        p_y: random_distribution(2, 0.0, rng),
        p_s_given_y: random_channel(2, 4, 0.2, rng),
        p_n: random_distribution(4, 0.2, rng),
        f: (0..4).map(|_| (0..4).map(|_| rng.below(n_graphs)).collect()).collect(),
        n_graphs,
        p_b_given_g: random_channel(n_graphs, 4, 0.2, rng),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub check: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// Smallest margin by which the inequality held (negative on failure).
    pub worst_slack: f64,
}

impl SweepReport {
    fn from_slacks(check: &'static str, slacks: Vec<Result<f64>>, tol: f64) -> Result<Self> {
        let slacks: Vec<f64> = slacks.into_iter().collect::<Result<_>>()?;
        Ok(SweepReport {
            check,
            instances: slacks.len(),
            failures: slacks.iter().filter(|&&s| s < -tol).count(),
            worst_slack: slacks.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

const GIBBS: u64 = 1;
const DPI: u64 = 2;
const NUISANCE: u64 = 3;
const MI: u64 = 4;

pub fn sweep_gibbs(instances: usize, seed: u64, exec: Execution) -> Result<SweepReport> {
    let slacks = exec.map(instances, |i| {
        let mut r = Rng::derive(seed, &[GIBBS, i as u64]);
        let n = 2 + r.below(7);
        let p = random_distribution(n, 0.3, &mut r);
        let q = random_distribution(n, 0.0, &mut r);
        gibbs_check(&p, &q).map(|g| g.rhs - g.lhs)
    });
    SweepReport::from_slacks("gibbs", slacks, TOLERANCE)
}

pub fn sweep_dpi(instances: usize, seed: u64, exec: Execution) -> Result<SweepReport> {
    let slacks = exec.map(instances, |i| {
        let mut r = Rng::derive(seed, &[DPI, i as u64]);
        let chain = random_markov_chain(4, &mut r)?;
        dpi_check(&chain).map(|d| d.i_xy - d.i_xz)
    });
    SweepReport::from_slacks("dpi", slacks, TOLERANCE)
}

pub fn sweep_nuisance(instances: usize, seed: u64, exec: Execution) -> Result<SweepReport> {
    let slacks = exec.map(instances, |i| {
        let mut r = Rng::derive(seed, &[NUISANCE, i as u64]);
        nuisance_invariance_check(&random_construction(&mut r)).map(|n| n.slack)
    });
    SweepReport::from_slacks("nuisance_invariance", slacks, TOLERANCE)
}

/// Agreement of direct mutual information with `H(X) + H(Y) − H(X,Y)`,
/// reported as `1e-12 − |difference|`.
pub fn sweep_mi_identity(instances: usize, seed: u64, exec: Execution) -> Result<SweepReport> {
    let slacks = exec.map(instances, |i| {
        let mut r = Rng::derive(seed, &[MI, i as u64]);
        let (a, b) = (2 + r.below(4), 2 + r.below(4));
        let j = DiscreteJoint::new(vec![a, b], random_distribution(a * b, 0.2, &mut r))?;
        let direct = mutual_information(&j, &[0], &[1])?;
        let via_h = j.entropy(&[0])? + j.entropy(&[1])? - j.entropy(&[0, 1])?;
        Ok(1e-12 - (direct - via_h.max(0.0)).abs())
    });
    SweepReport::from_slacks("mi_identity", slacks, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<SweepReport>,
    pub failures: usize,
}

/// Runs every sweep with `instances` random cases each.
pub fn verify_all(instances: usize, seed: u64, exec: Execution) -> Result<VerifyReport> {
    let checks = vec![
        sweep_gibbs(instances, seed, exec)?,
        sweep_dpi(instances, seed, exec)?,
        sweep_nuisance(instances, seed, exec)?,
        sweep_mi_identity(instances, seed, exec)?,
    ];
    let failures = checks.iter().map(|c| c.failures).sum();
    Ok(VerifyReport { seed, checks, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(p: [f64; 4]) -> DiscreteJoint {
        DiscreteJoint::new(vec![2, 2], p.to_vec()).unwrap()
    }

    #[test]
    fn mutual_information_examples() {
        let ind = bits([0.25; 4]);
        assert!(mutual_information(&ind, &[0], &[1]).unwrap().abs() < 1e-15);
        let same = bits([0.5, 0.0, 0.0, 0.5]);
        assert!((mutual_information(&same, &[0], &[1]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let j = bits([0.1, 0.2, 0.3, 0.4]);
        let a = mutual_information(&j, &[0], &[1]).unwrap();
        let b = mutual_information(&j, &[1], &[0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(mutual_information(&j, &[0], &[0]).is_err());
    }

    #[test]
    fn rejects_invalid_tables() {
        assert!(DiscreteJoint::new(vec![2], vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::new(vec![2], vec![1.5, -0.5]).is_err());
        assert!(DiscreteJoint::new(vec![3], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn gibbs_examples() {
        let g = gibbs_check(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((g.lhs - g.rhs + 0.368064).abs() < 1e-6);
        assert!(g.holds);
        let e = gibbs_check(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
        assert_eq!(e.lhs, e.rhs);
        assert!(gibbs_check(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dpi_examples() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = markov_chain(&[0.3, 0.7], &[vec![0.8, 0.2], vec![0.1, 0.9]], &id).unwrap();
        let d = dpi_check(&c).unwrap();
        assert!((d.i_xy - d.i_xz).abs() < 1e-12);
        let noise = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let c = markov_chain(&[0.3, 0.7], &[vec![0.8, 0.2], vec![0.1, 0.9]], &noise).unwrap();
        assert!(dpi_check(&c).unwrap().i_xz.abs() < 1e-15);
        // x = z with y independent is not Markov
        let bad = DiscreteJoint::new(vec![2, 2, 2], vec![0.25, 0.0, 0.25, 0.0, 0.0, 0.25, 0.0, 0.25]).unwrap();
        assert!(dpi_check(&bad).is_err());
    }

    fn identity(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect()
    }

    #[test]
    fn nuisance_examples() {
        let mut r = Rng::new(1, 0);
        let mut c = random_construction(&mut r);
        // compressed view independent of the graph
        c.p_b_given_g = vec![vec![0.25; 4]; c.n_graphs];
        let rep = nuisance_invariance_check(&c).unwrap();
        assert!(rep.i_b_g.abs() < 1e-15 && rep.i_b_n.abs() < 1e-15 && rep.holds);
        // full graph retained: G = (S, N)
        c.f = (0..4).map(|s| (0..4).map(|n| s * 4 + n).collect()).collect();
        c.n_graphs = 16;
        c.p_b_given_g = identity(16);
        let rep = nuisance_invariance_check(&c).unwrap();
        let j = c.joint().unwrap();
        assert!((rep.i_b_g - j.entropy(&[2]).unwrap()).abs() < 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn sweeps_pass_in_both_modes() {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let rep = verify_all(200, 3, exec).unwrap();
            assert_eq!(rep.failures, 0, "{rep:?}");
        }
        assert_eq!(
            sweep_dpi(50, 9, Execution::Sequential).unwrap(),
            sweep_dpi(50, 9, Execution::Parallel).unwrap()
        );
    }
}
