//! Discretized event-noise representation of the limit Gaussian functionals.
//!
//! Every reinfection event has a pre-individual (an initial-cohort node `(p,
//! j)` or a boundary cohort born at a grid node `(l, j)`) and a landing trait
//! `j'`. On each time cell the model carries independent standard Gaussians
//! per (pre-node, landing trait) scaled by the square root of the cell's
//! event intensity. The four M-families are linear projections:
//!
//! * `M01(φ)(t)`: initial-fluctuation field against the transported profile;
//! * `M02(φ)(t)`: removal projections of initial-cohort nodes, propagated
//!   with the survival ratio `E0(t)/E0(s)`;
//! * `M1(φ)(t)`: birth projections per landing trait, with survival anchored
//!   at the event cell;
//! * `M2(φ)(t)`: removal projections of boundary cohorts, propagated with
//!   `e^{-(Ψ_l(t) - Ψ_l(s))}`.
//!
//! Cell intensities and projection coefficients use trapezoid averages of the
//! two cell endpoints, with one-sided profile limits oriented into the cell,
//! matching the quadrature of the deterministic solver.

use crate::error::GaussError;
use crate::grid::TimeGrid;
use crate::lln::{exposure_tables, LlnSolution, NodeSide};
use crate::model::ModelSpec;
use crate::rng::Stream;

use super::Functional;

/// Joint sample batch of the noise functionals on the solver grid.
#[derive(Debug, Clone)]
pub struct GaussianSampleBatch {
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    pub replicates: Vec<NoiseReplicate>,
    /// Diagonal jitter added during factorization. Always zero: the sampler
    /// is an explicit square root of the assembled covariance.
    pub jitter: f64,
}

/// One joint draw; arrays are `[functional][time node]`.
#[derive(Debug, Clone, Default)]
pub struct NoiseReplicate {
    pub m01: Vec<Vec<f64>>,
    pub m02: Vec<Vec<f64>>,
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
}

impl NoiseReplicate {
    /// The additive noise `M01 − M02 + M1 − M2` for functional `f`.
    pub fn combination(&self, f: usize) -> Vec<f64> {
        (0..self.m01[f].len())
            .map(|i| self.m01[f][i] - self.m02[f][i] + self.m1[f][i] - self.m2[f][i])
            .collect()
    }

    /// Restrict to every other time node (for refinement studies).
    pub fn coarsen(&self) -> NoiseReplicate {
        let take = |v: &Vec<Vec<f64>>| {
            v.iter()
                .map(|row| row.iter().step_by(2).copied().collect())
                .collect()
        };
        NoiseReplicate {
            m01: take(&self.m01),
            m02: take(&self.m02),
            m1: take(&self.m1),
            m2: take(&self.m2),
        }
    }

    pub fn scale(&self, c: f64) -> NoiseReplicate {
        let map = |v: &Vec<Vec<f64>>| {
            v.iter()
                .map(|row| row.iter().map(|x| c * x).collect())
                .collect()
        };
        NoiseReplicate {
            m01: map(&self.m01),
            m02: map(&self.m02),
            m1: map(&self.m1),
            m2: map(&self.m2),
        }
    }

    pub fn add(&self, other: &NoiseReplicate) -> NoiseReplicate {
        let map = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter()
                .zip(b)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
                .collect()
        };
        NoiseReplicate {
            m01: map(&self.m01, &other.m01),
            m02: map(&self.m02, &other.m02),
            m1: map(&self.m1, &other.m1),
            m2: map(&self.m2, &other.m2),
        }
    }
}

/// Covariance blocks of the joint law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovBlock {
    M01M01,
    M02M02,
    M1M1,
    M2M2,
    M1M2,
    /// Derived removal/birth coupling of the initial cohort.
    M02M1,
    /// Any structurally independent pair.
    Zero,
}

impl CovBlock {
    /// Parse `"01-01"`, `"1-2"`, `"02-1"`, ... Symmetric names map to the
    /// same block; unknown family names are an error.
    pub fn parse(s: &str) -> Result<(CovBlock, bool), GaussError> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 2 {
            return Err(GaussError::UnknownBlock(s.into()));
        }
        let fam = |p: &str| -> Result<u8, GaussError> {
            match p {
                "01" => Ok(0),
                "02" => Ok(1),
                "1" => Ok(2),
                "2" => Ok(3),
                _ => Err(GaussError::UnknownBlock(s.into())),
            }
        };
        let a = fam(parts[0])?;
        let b = fam(parts[1])?;
        // (block, swapped): `swapped` means the caller's (φ,t) belongs to the
        // second family of the canonical pair.
        Ok(match (a, b) {
            (0, 0) => (CovBlock::M01M01, false),
            (1, 1) => (CovBlock::M02M02, false),
            (2, 2) => (CovBlock::M1M1, false),
            (3, 3) => (CovBlock::M2M2, false),
            (2, 3) => (CovBlock::M1M2, false),
            (3, 2) => (CovBlock::M1M2, true),
            (1, 2) => (CovBlock::M02M1, false),
            (2, 1) => (CovBlock::M02M1, true),
            _ => (CovBlock::Zero, false),
        })
    }
}

/// Shared tables for covariance evaluation and sampling.
pub struct NoiseModel<'a> {
    model: &'a ModelSpec,
    lln: &'a LlnSolution,
    functionals: Vec<Functional>,
    labels: Vec<String>,
    n: usize,
    m: usize,
    dt: f64,
    /// `e0[p][j][i] = exp(-Φ_p(t_i))`: survival of initial node `p`.
    e0: Vec<Vec<Vec<f64>>>,
    /// `exp_psi[l][j][i] = exp(-Ψ_l(t_i))`: survival of the cohort born at
    /// `t_l` evaluated at `t_i` (1 for `i <= l`).
    exp_psi: Vec<Vec<Vec<f64>>>,
    /// Removal-rate values at grid nodes for initial nodes, with the profile
    /// one-sided limit from above / below: `F[h] γ(a_p + t_h, j) e0[p][j][h]`.
    init_rate_above: Vec<Vec<Vec<f64>>>,
    init_rate_below: Vec<Vec<Vec<f64>>>,
    /// Birth mass of boundary node `l`, trait `j`: trapezoid weight times
    /// `F[l] S[l][j] w_j`.
    birth_mass: Vec<Vec<f64>>,
    /// `sqrt(K[i][j] w_j)`.
    sqk: Vec<Vec<f64>>,
    /// Profile tables per functional: `phi_init[f][p][j][i] = φ(a_p + t_i)`
    /// (node-side policy of the initial quadrature).
    phi_init: Vec<Vec<Vec<Vec<f64>>>>,
    /// `phi_tl_above[f][l][j][i] = φ((t_i - t_l)^+)`, `.._below` the left
    /// limit; ages `t_i - t_l`, entries for `i >= l`.
    phi_tl_above: Vec<Vec<Vec<Vec<f64>>>>,
    phi_tl_below: Vec<Vec<Vec<Vec<f64>>>>,
    /// Birth intensity marginal per cell and landing trait:
    /// `birth_intensity[k][j'] = Σ_ρ cell_mass(ρ, k) K(θ_ρ, θ_j') w_j'`.
    birth_intensity: Vec<Vec<f64>>,
}

impl<'a> NoiseModel<'a> {
    pub fn new(
        model: &'a ModelSpec,
        lln: &'a LlnSolution,
        functionals: Vec<Functional>,
    ) -> NoiseModel<'a> {
        let grid = &lln.grid;
        let n = grid.n_steps();
        let m = model.n_traits();
        let dt = grid.dt();
        let quad = &lln.quad;
        let np = quad.ages.len();
        let w = model.traits().weights();

        let tables = exposure_tables(model, grid, &lln.f, &quad.ages);
        let mut e0 = vec![vec![vec![0.0; n + 1]; m]; np];
        let mut init_rate_above = vec![vec![vec![0.0; n + 1]; m]; np];
        let mut init_rate_below = vec![vec![vec![0.0; n + 1]; m]; np];
        for (p, &a) in quad.ages.iter().enumerate() {
            for j in 0..m {
                for i in 0..=n {
                    let surv = (-tables.phi[p][j][i]).exp();
                    e0[p][j][i] = surv;
                    let age = a + grid.time(i);
                    init_rate_above[p][j][i] = lln.f[i] * model.gamma(age, j) * surv;
                    init_rate_below[p][j][i] = lln.f[i] * model.gamma_below(age, j) * surv;
                }
            }
        }
        let mut exp_psi = vec![vec![vec![1.0; n + 1]; m]; n + 1];
        for l in 0..=n {
            for j in 0..m {
                for i in (l + 1)..=n {
                    exp_psi[l][j][i] = (-tables.psi[l][j][i]).exp();
                }
            }
        }
        let mut birth_mass = vec![vec![0.0; m]; n + 1];
        for l in 0..=n {
            let tau = if l == 0 || l == n { 0.5 * dt } else { dt };
            for j in 0..m {
                birth_mass[l][j] = tau * lln.f[l] * lln.s[l][j] * w[j];
            }
        }
        let sqk = (0..m)
            .map(|i| (0..m).map(|j| (model.kernel(i, j) * w[j]).sqrt()).collect())
            .collect();

        let labels = functionals.iter().map(|f| f.label()).collect();
        let mut phi_init = Vec::with_capacity(functionals.len());
        let mut phi_tl_above = Vec::with_capacity(functionals.len());
        let mut phi_tl_below = Vec::with_capacity(functionals.len());
        for f in &functionals {
            let mut fi = vec![vec![vec![0.0; n + 1]; m]; np];
            for (p, &a) in quad.ages.iter().enumerate() {
                for j in 0..m {
                    for i in 0..=n {
                        fi[p][j][i] = f.value_at(model, quad.sides[p], a + grid.time(i), j);
                    }
                }
            }
            phi_init.push(fi);
            let mut fa = vec![vec![vec![0.0; n + 1]; m]; n + 1];
            let mut fb = vec![vec![vec![0.0; n + 1]; m]; n + 1];
            for l in 0..=n {
                for j in 0..m {
                    for i in l..=n {
                        let age = grid.time(i) - grid.time(l);
                        fa[l][j][i] = f.value_at(model, NodeSide::LeftEdge, age, j);
                        fb[l][j][i] = f.value_at(model, NodeSide::RightEdge, age, j);
                    }
                }
            }
            phi_tl_above.push(fa);
            phi_tl_below.push(fb);
        }

        let mut nm = NoiseModel {
            model,
            lln,
            functionals,
            labels,
            n,
            m,
            dt,
            e0,
            exp_psi,
            init_rate_above,
            init_rate_below,
            birth_mass,
            sqk,
            phi_init,
            phi_tl_above,
            phi_tl_below,
            birth_intensity: Vec::new(),
        };
        let mut bi = vec![vec![0.0; m]; n + 1];
        for k in 1..=n {
            for jn in 0..m {
                let mut total = 0.0;
                for p in 0..np {
                    for j in 0..m {
                        total += nm.cell_mass_init(p, j, k) * nm.model.kernel(j, jn) * w[jn];
                    }
                }
                for l in 0..k {
                    for j in 0..m {
                        total += nm.cell_mass_bnd(l, j, k) * nm.model.kernel(j, jn) * w[jn];
                    }
                }
                bi[k][jn] = total;
            }
        }
        nm.birth_intensity = bi;
        nm
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.lln.grid
    }

    pub fn functional_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Event mass of initial node `(p, j)` removed during cell `k`.
    #[inline]
    fn cell_mass_init(&self, p: usize, j: usize, k: usize) -> f64 {
        self.lln.quad.mass[p][j]
            * self.dt
            * 0.5
            * (self.init_rate_above[p][j][k - 1] + self.init_rate_below[p][j][k])
    }

    /// Event mass of the boundary cohort born at node `l` (trait `j`) removed
    /// during cell `k > l`.
    #[inline]
    fn cell_mass_bnd(&self, l: usize, j: usize, k: usize) -> f64 {
        let grid = &self.lln.grid;
        let age_lo = grid.time(k - 1) - grid.time(l);
        let age_hi = grid.time(k) - grid.time(l);
        let r_lo = self.lln.f[k - 1]
            * self.model.gamma(age_lo, j)
            * self.exp_psi[l][j][k - 1];
        let r_hi = self.lln.f[k] * self.model.gamma_below(age_hi, j) * self.exp_psi[l][j][k];
        self.birth_mass[l][j] * self.dt * 0.5 * (r_lo + r_hi)
    }

    /// Removal coefficient of initial node `(p,j)` in cell `k` toward
    /// `M02(f)(t_i)`: `φ(a_p + t_i) E0(t_i) ⋅ avg_h 1/E0(t_h)`.
    #[inline]
    fn c02(&self, f: usize, p: usize, j: usize, k: usize, i: usize) -> f64 {
        self.phi_init[f][p][j][i]
            * self.e0[p][j][i]
            * 0.5
            * (1.0 / self.e0[p][j][k - 1] + 1.0 / self.e0[p][j][k])
    }

    /// Birth coefficient of cell `k`, landing trait `jn`, toward `M1(f)(t_i)`.
    #[inline]
    fn c1(&self, f: usize, k: usize, jn: usize, i: usize) -> f64 {
        0.5 * (self.phi_tl_below[f][k - 1][jn][i] * self.exp_psi[k - 1][jn][i]
            + self.phi_tl_above[f][k][jn][i] * self.exp_psi[k][jn][i])
    }

    /// Removal coefficient of the boundary cohort `(l,j)` in cell `k` toward
    /// `M2(f)(t_i)`: `φ(t_i - t_l) e^{-Ψ_l(t_i)} ⋅ avg_h e^{+Ψ_l(t_h)}`.
    #[inline]
    fn c2(&self, f: usize, l: usize, j: usize, k: usize, i: usize) -> f64 {
        let phi = self.phi_node_value(f, l, j, i);
        phi * self.exp_psi[l][j][i]
            * 0.5
            * (1.0 / self.exp_psi[l][j][k - 1] + 1.0 / self.exp_psi[l][j][k])
    }

    /// φ(t_i - t_l, j) with the birth-node side policy: left limit at the
    /// domain edge `l = 0`, mean at interior nodes, right limit at `l = i`.
    #[inline]
    fn phi_node_value(&self, f: usize, l: usize, j: usize, i: usize) -> f64 {
        if l == 0 {
            self.phi_tl_below[f][l][j][i]
        } else if l == i {
            self.phi_tl_above[f][l][j][i]
        } else {
            0.5 * (self.phi_tl_above[f][l][j][i] + self.phi_tl_below[f][l][j][i])
        }
    }

    /// Centered initial-field profile `g(p,j) = φ(a_p + t_i) E0(t_i)` and its
    /// mean under the initial quadrature.
    fn m01_profile(&self, f: usize, i: usize) -> (Vec<Vec<f64>>, f64) {
        let quad = &self.lln.quad;
        let np = quad.ages.len();
        let mut g = vec![vec![0.0; self.m]; np];
        let mut mean = 0.0;
        for p in 0..np {
            for j in 0..self.m {
                let v = self.phi_init[f][p][j][i] * self.e0[p][j][i];
                g[p][j] = v;
                mean += quad.mass[p][j] * v;
            }
        }
        (g, mean)
    }

    /// Deterministic covariance entry between `(block-left: f at node i)` and
    /// `(block-right: g at node i')`, from the same discrete representation
    /// the sampler draws from.
    pub fn cov(
        &self,
        block: CovBlock,
        f: usize,
        g: usize,
        i: usize,
        i_prime: usize,
    ) -> f64 {
        let np = self.lln.quad.ages.len();
        match block {
            CovBlock::Zero => 0.0,
            CovBlock::M01M01 => {
                let (gf, mf) = self.m01_profile(f, i);
                let (gg, mg) = self.m01_profile(g, i_prime);
                let mut total = 0.0;
                for p in 0..np {
                    for j in 0..self.m {
                        total +=
                            self.lln.quad.mass[p][j] * (gf[p][j] - mf) * (gg[p][j] - mg);
                    }
                }
                total
            }
            CovBlock::M02M02 => {
                let kmax = i.min(i_prime);
                let mut total = 0.0;
                for k in 1..=kmax {
                    for p in 0..np {
                        for j in 0..self.m {
                            let mass = self.cell_mass_init(p, j, k);
                            if mass != 0.0 {
                                total += self.c02(f, p, j, k, i)
                                    * self.c02(g, p, j, k, i_prime)
                                    * mass;
                            }
                        }
                    }
                }
                total
            }
            CovBlock::M1M1 => {
                let kmax = i.min(i_prime);
                let mut total = 0.0;
                for k in 1..=kmax {
                    for jn in 0..self.m {
                        total += self.c1(f, k, jn, i)
                            * self.c1(g, k, jn, i_prime)
                            * self.birth_intensity[k][jn];
                    }
                }
                total
            }
            CovBlock::M2M2 => {
                let kmax = i.min(i_prime);
                let mut total = 0.0;
                for k in 1..=kmax {
                    for l in 0..k {
                        for j in 0..self.m {
                            let mass = self.cell_mass_bnd(l, j, k);
                            if mass != 0.0 {
                                total += self.c2(f, l, j, k, i)
                                    * self.c2(g, l, j, k, i_prime)
                                    * mass;
                            }
                        }
                    }
                }
                total
            }
            CovBlock::M1M2 => {
                // f indexes M1 at node i, g indexes M2 at node i'.
                let w = self.model.traits().weights();
                let kmax = i.min(i_prime);
                let mut total = 0.0;
                for k in 1..=kmax {
                    let c1k: Vec<f64> =
                        (0..self.m).map(|jn| self.c1(f, k, jn, i)).collect();
                    for l in 0..k {
                        for j in 0..self.m {
                            let mass = self.cell_mass_bnd(l, j, k);
                            if mass == 0.0 {
                                continue;
                            }
                            let inner: f64 = (0..self.m)
                                .map(|jn| c1k[jn] * self.model.kernel(j, jn) * w[jn])
                                .sum();
                            total += self.c2(g, l, j, k, i_prime) * inner * mass;
                        }
                    }
                }
                total
            }
            CovBlock::M02M1 => {
                // f indexes M02 at node i, g indexes M1 at node i'.
                let w = self.model.traits().weights();
                let kmax = i.min(i_prime);
                let mut total = 0.0;
                for k in 1..=kmax {
                    let c1k: Vec<f64> =
                        (0..self.m).map(|jn| self.c1(g, k, jn, i_prime)).collect();
                    for p in 0..np {
                        for j in 0..self.m {
                            let mass = self.cell_mass_init(p, j, k);
                            if mass == 0.0 {
                                continue;
                            }
                            let inner: f64 = (0..self.m)
                                .map(|jn| c1k[jn] * self.model.kernel(j, jn) * w[jn])
                                .sum();
                            total += self.c02(f, p, j, k, i) * inner * mass;
                        }
                    }
                }
                total
            }
        }
    }

    /// One joint replicate, deterministic given the stream.
    pub fn replicate(&self, stream: &mut Stream) -> NoiseReplicate {
        let nf = self.functionals.len();
        let np = self.lln.quad.ages.len();
        let quad = &self.lln.quad;
        let mut rep = NoiseReplicate {
            m01: vec![vec![0.0; self.n + 1]; nf],
            m02: vec![vec![0.0; self.n + 1]; nf],
            m1: vec![vec![0.0; self.n + 1]; nf],
            m2: vec![vec![0.0; self.n + 1]; nf],
        };

        // Initial fluctuation field (independent of the event noise).
        let xi0: Vec<Vec<f64>> = (0..np)
            .map(|_| (0..self.m).map(|_| stream.normal()).collect())
            .collect();
        for f in 0..nf {
            for i in 0..=self.n {
                let (g, mean) = self.m01_profile(f, i);
                let mut total = 0.0;
                for p in 0..np {
                    for j in 0..self.m {
                        let mass = quad.mass[p][j];
                        if mass != 0.0 {
                            total += mass.sqrt() * (g[p][j] - mean) * xi0[p][j];
                        }
                    }
                }
                rep.m01[f][i] = total;
            }
        }

        // Event noise: removal accumulators and per-cell birth projections.
        let mut u_init = vec![vec![0.0; self.m]; np]; // Σ_k R/E0-avg
        let mut v_bnd = vec![vec![0.0; self.m]; self.n + 1]; // Σ_k R e^{+Ψ}-avg
        let mut b_cell = vec![vec![0.0; self.m]; self.n + 1]; // B_j'^{(k)}

        for k in 1..=self.n {
            // initial-cohort removals
            for p in 0..np {
                for j in 0..self.m {
                    let mass = self.cell_mass_init(p, j, k);
                    if mass <= 0.0 {
                        continue;
                    }
                    let s = mass.sqrt();
                    let mut r = 0.0;
                    for jn in 0..self.m {
                        let xi = stream.normal();
                        let c = s * self.sqk[j][jn];
                        r += c * xi;
                        b_cell[k][jn] += c * xi;
                    }
                    u_init[p][j] +=
                        r * 0.5 * (1.0 / self.e0[p][j][k - 1] + 1.0 / self.e0[p][j][k]);
                }
            }
            // boundary-cohort removals
            for l in 0..k {
                for j in 0..self.m {
                    let mass = self.cell_mass_bnd(l, j, k);
                    if mass <= 0.0 {
                        continue;
                    }
                    let s = mass.sqrt();
                    let mut r = 0.0;
                    for jn in 0..self.m {
                        let xi = stream.normal();
                        let c = s * self.sqk[j][jn];
                        r += c * xi;
                        b_cell[k][jn] += c * xi;
                    }
                    v_bnd[l][j] += r
                        * 0.5
                        * (1.0 / self.exp_psi[l][j][k - 1] + 1.0 / self.exp_psi[l][j][k]);
                }
            }

            // outputs at node i = k
            for f in 0..nf {
                let mut m02 = 0.0;
                for p in 0..np {
                    for j in 0..self.m {
                        if u_init[p][j] != 0.0 {
                            m02 += self.phi_init[f][p][j][k]
                                * self.e0[p][j][k]
                                * u_init[p][j];
                        }
                    }
                }
                rep.m02[f][k] = m02;

                let mut m2 = 0.0;
                for l in 0..k {
                    for j in 0..self.m {
                        if v_bnd[l][j] != 0.0 {
                            m2 += self.phi_node_value(f, l, j, k)
                                * self.exp_psi[l][j][k]
                                * v_bnd[l][j];
                        }
                    }
                }
                rep.m2[f][k] = m2;

                let mut m1 = 0.0;
                for kk in 1..=k {
                    for jn in 0..self.m {
                        if b_cell[kk][jn] != 0.0 {
                            m1 += self.c1(f, kk, jn, k) * b_cell[kk][jn];
                        }
                    }
                }
                rep.m1[f][k] = m1;
            }
        }
        rep
    }

    /// Draw `n_reps` independent replicates with per-replicate substreams.
    pub fn sample(&self, n_reps: usize, seed: u64) -> GaussianSampleBatch {
        let replicates = (0..n_reps)
            .map(|r| self.replicate(&mut Stream::substream(seed, r as u64)))
            .collect();
        GaussianSampleBatch {
            times: self.lln.grid.times(),
            labels: self.labels.clone(),
            replicates,
            jitter: 0.0,
        }
    }
}

/// Public covariance evaluation by block name at grid times.
pub fn cov_m(
    noise: &NoiseModel,
    block: &str,
    f: usize,
    g: usize,
    t: f64,
    t_prime: f64,
) -> Result<f64, GaussError> {
    let (blk, swapped) = CovBlock::parse(block)?;
    let grid = noise.grid();
    let locate = |t: f64| -> Result<usize, GaussError> {
        let i = (t / grid.dt()).round() as usize;
        if i > grid.n_steps() || (grid.time(i) - t).abs() > 1e-9 {
            Err(GaussError::Grid {
                t,
                horizon: grid.horizon(),
            })
        } else {
            Ok(i)
        }
    };
    let i = locate(t)?;
    let ip = locate(t_prime)?;
    Ok(if swapped {
        noise.cov(blk, g, f, ip, i)
    } else {
        noise.cov(blk, f, g, i, ip)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lln::{solve_lln, LlnParams};
    use crate::presets;
    use crate::ModelSpec;

    fn setup(preset: &str, dt: f64) -> (ModelSpec, LlnSolution) {
        let model = ModelSpec::from_toml(preset).unwrap();
        let sol = solve_lln(&model, &LlnParams::new(8.0, dt)).unwrap();
        (model, sol)
    }

    #[test]
    fn same_seed_identical_batch() {
        let (model, sol) = setup(presets::MODEL_B, 0.2);
        let noise = NoiseModel::new(&model, &sol, vec![Functional::Lambda]);
        let a = noise.sample(3, 99);
        let b = noise.sample(3, 99);
        for r in 0..3 {
            assert_eq!(a.replicates[r].m1, b.replicates[r].m1);
            assert_eq!(a.replicates[r].m02, b.replicates[r].m02);
        }
        assert_eq!(a.jitter, 0.0);
    }

    #[test]
    fn gamma_zero_kills_event_noise() {
        let (model, sol) = setup(presets::GAMMA_ZERO, 0.2);
        let noise = NoiseModel::new(&model, &sol, vec![Functional::Lambda]);
        let rep = noise.replicate(&mut Stream::from_seed(5));
        for i in 0..rep.m02[0].len() {
            assert_eq!(rep.m02[0][i], 0.0);
            assert_eq!(rep.m1[0][i], 0.0);
            assert_eq!(rep.m2[0][i], 0.0);
        }
        // M01 survives: the initial fluctuation of a transported profile.
        assert!(rep.m01[0].iter().any(|v| v.abs() > 1e-6));
        // covariance blocks follow suit
        assert_eq!(noise.cov(CovBlock::M02M02, 0, 0, 10, 10), 0.0);
        assert_eq!(noise.cov(CovBlock::M1M1, 0, 0, 10, 10), 0.0);
        assert_eq!(noise.cov(CovBlock::M2M2, 0, 0, 10, 10), 0.0);
        assert_eq!(noise.cov(CovBlock::M1M2, 0, 0, 10, 10), 0.0);
    }

    #[test]
    fn model_a_noise_combination_vanishes_pathwise() {
        // Constant λ at the bound with γ ≡ 1: the force of infection of the
        // finite system is deterministic, so M01 − M02 + M1 − M2 applied to λ
        // must vanish for every replicate, to machine precision.
        let (model, sol) = setup(presets::MODEL_A, 0.1);
        let noise = NoiseModel::new(&model, &sol, vec![Functional::Lambda]);
        for r in 0..5 {
            let rep = noise.replicate(&mut Stream::substream(31, r));
            let comb = rep.combination(0);
            let sup = comb.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let scale = rep.m1[0]
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()))
                .max(1e-30);
            assert!(
                sup < 1e-10,
                "replicate {r}: sup |N| = {sup:.3e} (M1 scale {scale:.3e})"
            );
            assert!(scale > 1e-3, "noise should not be degenerate overall");
        }
    }

    #[test]
    fn cov_blocks_match_parse_and_zero_blocks() {
        let (model, sol) = setup(presets::MODEL_B, 0.2);
        let noise = NoiseModel::new(&model, &sol, vec![Functional::Lambda]);
        assert_eq!(cov_m(&noise, "01-02", 0, 0, 2.0, 4.0).unwrap(), 0.0);
        assert_eq!(cov_m(&noise, "1-01", 0, 0, 2.0, 4.0).unwrap(), 0.0);
        assert_eq!(cov_m(&noise, "2-01", 0, 0, 2.0, 4.0).unwrap(), 0.0);
        assert_eq!(cov_m(&noise, "2-02", 0, 0, 2.0, 4.0).unwrap(), 0.0);
        assert!(cov_m(&noise, "1-1", 0, 0, 4.0, 4.0).unwrap() > 0.0);
        assert!(matches!(
            cov_m(&noise, "3-1", 0, 0, 2.0, 2.0),
            Err(GaussError::UnknownBlock(_))
        ));
        assert!(matches!(
            cov_m(&noise, "1-1", 0, 0, 2.05, 2.0),
            Err(GaussError::Grid { .. })
        ));
        // symmetric names agree
        let a = cov_m(&noise, "1-2", 0, 0, 3.0, 5.0).unwrap();
        let b = cov_m(&noise, "2-1", 0, 0, 5.0, 3.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_b_lambda_m2_vanishes_identically() {
        // λ is supported on age < 1 while removal needs susceptibility,
        // i.e. age >= 2: a boundary-born individual is never removed while
        // still infectious, so M2(λ) is exactly zero for this model.
        let (model, sol) = setup(presets::MODEL_B, 0.2);
        let noise = NoiseModel::new(&model, &sol, vec![Functional::Lambda]);
        let rep = noise.replicate(&mut Stream::from_seed(3));
        assert!(rep.m2[0].iter().all(|v| *v == 0.0));
        assert!(rep.m1[0].iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn empirical_covariance_matches_analytic() {
        let (model, sol) = setup(presets::MODEL_B, 0.2);
        // gammaK has mass at ages >= 2, exercising the M2 blocks.
        let noise = NoiseModel::new(
            &model,
            &sol,
            vec![Functional::Lambda, Functional::GammaKernel(0)],
        );
        let n_reps = 4000;
        let batch = noise.sample(n_reps, 7);
        let idx = |t: f64| (t / 0.2).round() as usize;

        let grab = |sel: fn(&NoiseReplicate) -> &Vec<Vec<f64>>, f: usize, i: usize| -> Vec<f64> {
            batch.replicates.iter().map(|r| sel(r)[f][i]).collect()
        };
        let x1 = grab(|r| &r.m1, 0, idx(4.0));
        let y2 = grab(|r| &r.m2, 1, idx(6.0));
        let y02 = grab(|r| &r.m02, 1, idx(6.0));
        let y1 = grab(|r| &r.m1, 1, idx(6.0));

        let v1 = crate::stats::variance(&x1);
        let a1 = noise.cov(CovBlock::M1M1, 0, 0, idx(4.0), idx(4.0));
        let se = a1 * (2.0 / n_reps as f64).sqrt();
        assert!((v1 - a1).abs() < 4.0 * se, "v1 {v1} a1 {a1}");

        let v2 = noise.cov(CovBlock::M2M2, 1, 1, idx(6.0), idx(6.0));
        assert!(v2 > 0.0, "gammaK M2 variance must be positive");
        let e2 = crate::stats::variance(&y2);
        let se2 = v2 * (2.0 / n_reps as f64).sqrt();
        assert!((e2 - v2).abs() < 4.0 * se2, "e2 {e2} v2 {v2}");

        let c12 = crate::stats::covariance(&x1, &y2);
        let a12 = noise.cov(CovBlock::M1M2, 0, 1, idx(4.0), idx(6.0));
        let se12 = ((a1 * v2 + a12 * a12) / n_reps as f64).sqrt();
        assert!(
            (c12 - a12).abs() < 4.0 * se12,
            "c12 {c12} a12 {a12} se {se12}"
        );

        let c021 = crate::stats::covariance(&y02, &y1);
        let a021 = noise.cov(CovBlock::M02M1, 1, 1, idx(6.0), idx(6.0));
        let v02 = noise.cov(CovBlock::M02M02, 1, 1, idx(6.0), idx(6.0));
        let v1g = noise.cov(CovBlock::M1M1, 1, 1, idx(6.0), idx(6.0));
        let se021 = ((v02 * v1g + a021 * a021) / n_reps as f64).sqrt();
        assert!(
            (c021 - a021).abs() < 4.0 * se021,
            "c021 {c021} a021 {a021} se {se021}"
        );
        assert!(a021 != 0.0, "derived 02-1 coupling must be nonzero");
    }

    #[test]
    fn linearity_of_batch_helpers() {
        let (model, sol) = setup(presets::MODEL_B, 0.4);
        let noise = NoiseModel::new(&model, &sol, vec![Functional::Lambda]);
        let a = noise.replicate(&mut Stream::from_seed(1));
        let b = noise.replicate(&mut Stream::from_seed(2));
        let sum = a.add(&b);
        let twice = a.scale(2.0);
        for i in 0..a.m1[0].len() {
            assert!((sum.m1[0][i] - (a.m1[0][i] + b.m1[0][i])).abs() < 1e-15);
            assert!((twice.m02[0][i] - 2.0 * a.m02[0][i]).abs() < 1e-15);
        }
    }
}
