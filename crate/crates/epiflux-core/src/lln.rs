//! Deterministic large-population limit.
//!
//! The limit density solves a transport PDE with killing rate `F(t) γ(a, θ)`
//! and boundary inflow `F(t) S(t, θ)`. Integrating the characteristic
//! solution against λ and against `γ(·, θ̃) K(θ̃, θ)` closes the system into
//! two coupled Volterra fixed-point equations for `F(t)` and `S(t, θ)`:
//!
//! ```text
//! F(t)    = Σ_θ w_θ ∫ λ(a+t, θ) u₀(a, θ) e^{-∫₀ᵗ F γ(a+·)} da
//!         + Σ_θ w_θ ∫₀ᵗ λ(t-s, θ) F(s) S(s, θ) e^{-∫ₛᵗ F γ(·-s)} ds
//! S(t,q)  = same with λ(x, θ) replaced by γ(x, θ) K(θ, q)
//! ```
//!
//! solved by Picard iteration. Quadrature is trapezoidal with two twists that
//! keep the degenerate constant-rate model an exact fixed point: profile
//! evaluation takes the mean of one-sided limits at jump ages, and each cell
//! of a `∫ g(s) e^{-Ψ(s,t)} ds` integral carries the factor
//! `tanh(μ/2)/(μ/2)` (`μ` = exposure decrement across the cell), which is the
//! exact correction when `g` is constant and the rate is constant on the
//! cell.

use crate::error::LlnError;
use crate::grid::{interp, TimeGrid};
use crate::model::{InitialCondition, ModelSpec};

/// Where an age node sits in the quadrature: profiles are evaluated with the
/// one-sided limit pointing into the domain at the edges and with the mean of
/// both limits at interior nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSide {
    LeftEdge,
    Interior,
    RightEdge,
    /// Empirical atom: plain point evaluation.
    Atom,
}

#[inline]
pub(crate) fn lambda_at(model: &ModelSpec, side: NodeSide, a: f64, j: usize) -> f64 {
    match side {
        NodeSide::LeftEdge | NodeSide::Atom => model.lambda(a, j),
        NodeSide::Interior => model.lambda_mean(a, j),
        NodeSide::RightEdge => model.lambda_below(a, j),
    }
}

#[inline]
pub(crate) fn gamma_at(model: &ModelSpec, side: NodeSide, a: f64, j: usize) -> f64 {
    match side {
        NodeSide::LeftEdge | NodeSide::Atom => model.gamma(a, j),
        NodeSide::Interior => model.gamma_mean(a, j),
        NodeSide::RightEdge => model.gamma_below(a, j),
    }
}

/// Discretized initial measure: age nodes with per-trait masses summing to 1.
#[derive(Debug, Clone)]
pub struct InitialQuadrature {
    pub ages: Vec<f64>,
    /// `mass[p][j]`, normalized so the total is exactly 1.
    pub mass: Vec<Vec<f64>>,
    pub a_max: f64,
    /// Node positions for profile evaluation along the age axis.
    pub sides: Vec<NodeSide>,
}

impl InitialQuadrature {
    /// Trapezoid nodes with spacing `dt` up to the tail-mass truncation point
    /// (parametric initials), or the empirical atoms. Node masses combine the
    /// one-sided density limits of the two adjacent half-cells, then the
    /// whole table is normalized into an exact probability measure.
    pub fn build(model: &ModelSpec, dt: f64) -> InitialQuadrature {
        let m = model.n_traits();
        match model.initial() {
            InitialCondition::Parametric { ages, trait_probs } => {
                let a_max_raw = ages.truncation(model.tail_mass());
                let steps = (a_max_raw / dt).ceil() as usize;
                let a_max = steps as f64 * dt;
                let nodes: Vec<f64> = (0..=steps).map(|p| p as f64 * dt).collect();
                let mut mass = vec![vec![0.0; m]; nodes.len()];
                let mut total = 0.0;
                for (p, &a) in nodes.iter().enumerate() {
                    let mut f0 = 0.0;
                    if p > 0 {
                        f0 += 0.5 * dt * ages.density_below(a);
                    }
                    if p < steps {
                        f0 += 0.5 * dt * ages.density(a);
                    }
                    for (j, pr) in trait_probs.iter().enumerate() {
                        let v = f0 * pr;
                        mass[p][j] = v;
                        total += v;
                    }
                }
                for row in mass.iter_mut() {
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                }
                let sides = (0..=steps)
                    .map(|p| {
                        if p == 0 {
                            NodeSide::LeftEdge
                        } else if p == steps {
                            NodeSide::RightEdge
                        } else {
                            NodeSide::Interior
                        }
                    })
                    .collect();
                InitialQuadrature {
                    ages: nodes,
                    mass,
                    a_max,
                    sides,
                }
            }
            InitialCondition::Empirical { ages, traits } => {
                let w = 1.0 / ages.len() as f64;
                let mut mass = vec![vec![0.0; m]; ages.len()];
                for (r, &j) in traits.iter().enumerate() {
                    mass[r][j] = w;
                }
                let a_max = ages.iter().cloned().fold(0.0, f64::max);
                InitialQuadrature {
                    ages: ages.clone(),
                    mass,
                    a_max,
                    sides: vec![NodeSide::Atom; traits.len()],
                }
            }
        }
    }
}

/// Solver parameters.
#[derive(Debug, Clone, Copy)]
pub struct LlnParams {
    pub horizon: f64,
    pub dt: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl LlnParams {
    pub fn new(horizon: f64, dt: f64) -> Self {
        LlnParams {
            horizon,
            dt,
            tol: 1e-12,
            max_iters: 1000,
        }
    }
}

/// Tabulated deterministic limit.
#[derive(Debug, Clone)]
pub struct LlnSolution {
    pub grid: TimeGrid,
    /// Force of infection per grid node.
    pub f: Vec<f64>,
    /// Mean susceptibility `s[i][j]` per node and trait.
    pub s: Vec<Vec<f64>>,
    pub quad: InitialQuadrature,
    pub model_digest: String,
    pub residual: f64,
    pub iterations: usize,
}

/// Exposure integral tables for a solved `F`.
///
/// `phi[p][j][i] = ∫₀^{t_i} F(r) γ(r + a_p, θ_j) dr` (transported initials),
/// `psi[l][j][i] = ∫_{t_l}^{t_i} F(r) γ(r - t_l, θ_j) dr` (cohort born at
/// `t_l`), both by cumulative cell-oriented trapezoid: ages increase along
/// the integration variable, so each cell pairs the right limit of γ at its
/// left node with the left limit at its right node.
pub struct ExposureTables {
    pub phi: Vec<Vec<Vec<f64>>>,
    pub psi: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn exposure_tables(
    model: &ModelSpec,
    grid: &TimeGrid,
    f: &[f64],
    ages: &[f64],
) -> ExposureTables {
    let n = grid.n_steps();
    let m = model.n_traits();
    let dt = grid.dt();
    let mut phi = vec![vec![vec![0.0; n + 1]; m]; ages.len()];
    for (p, &a) in ages.iter().enumerate() {
        for j in 0..m {
            let tab = &mut phi[p][j];
            for i in 1..=n {
                let lo = f[i - 1] * model.gamma(a + grid.time(i - 1), j);
                let hi = f[i] * model.gamma_below(a + grid.time(i), j);
                tab[i] = tab[i - 1] + 0.5 * dt * (lo + hi);
            }
        }
    }
    let mut psi = vec![vec![vec![0.0; n + 1]; m]; n + 1];
    for l in 0..=n {
        for j in 0..m {
            let tab = &mut psi[l][j];
            for i in (l + 1)..=n {
                let lo = f[i - 1] * model.gamma(grid.time(i - 1) - grid.time(l), j);
                let hi = f[i] * model.gamma_below(grid.time(i) - grid.time(l), j);
                tab[i] = tab[i - 1] + 0.5 * dt * (lo + hi);
            }
        }
    }
    ExposureTables { phi, psi }
}

/// `tanh(μ/2) / (μ/2)`: exact cell factor for a constant integrand against a
/// constant-rate exponential; 1 + O(μ²) in general.
#[inline]
pub(crate) fn exp_cell_factor(mu: f64) -> f64 {
    let x = 0.5 * mu.abs();
    if x < 1e-4 {
        1.0 - x * x / 3.0
    } else {
        x.tanh() / x
    }
}

/// Solve the (F, S) fixed point by Picard iteration.
pub fn solve_lln(model: &ModelSpec, params: &LlnParams) -> Result<LlnSolution, LlnError> {
    if !(params.tol > 0.0) {
        return Err(LlnError::Parameter("tol must be positive".into()));
    }
    let grid = TimeGrid::new(params.horizon, params.dt)?;
    let quad = InitialQuadrature::build(model, params.dt);
    let n = grid.n_steps();
    let m = model.n_traits();

    let mut f = vec![0.0; n + 1];
    let mut s = vec![vec![0.0; m]; n + 1];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..params.max_iters {
        let (f_new, s_new) = picard_sweep_from(model, &grid, &quad, &f, &s);

        let mut delta: f64 = 0.0;
        for i in 0..=n {
            delta = delta.max((f_new[i] - f[i]).abs());
            for q in 0..m {
                delta = delta.max((s_new[i][q] - s[i][q]).abs());
            }
        }
        f = f_new;
        s = s_new;
        residual = delta;
        iterations = iter + 1;
        if delta < params.tol {
            break;
        }
    }
    if residual >= params.tol {
        return Err(LlnError::NonConvergence {
            max_iters: params.max_iters,
            residual,
        });
    }

    Ok(LlnSolution {
        grid,
        f,
        s,
        quad,
        model_digest: model.digest().to_string(),
        residual,
        iterations,
    })
}

/// Recompute both fixed-point right-hand sides from the stored tables and
/// report the sup-norm discrepancies `(in F, in S)`.
pub fn lln_residual(sol: &LlnSolution, model: &ModelSpec) -> (f64, f64) {
    let mut probe = sol.clone();
    one_picard_sweep(model, &mut probe);
    let mut df: f64 = 0.0;
    let mut ds: f64 = 0.0;
    for i in 0..sol.f.len() {
        df = df.max((probe.f[i] - sol.f[i]).abs());
        for q in 0..sol.s[i].len() {
            ds = ds.max((probe.s[i][q] - sol.s[i][q]).abs());
        }
    }
    (df, ds)
}

fn one_picard_sweep(model: &ModelSpec, sol: &mut LlnSolution) {
    let swept = picard_sweep_from(model, &sol.grid, &sol.quad, &sol.f, &sol.s);
    sol.f = swept.0;
    sol.s = swept.1;
}

/// One application of the fixed-point map to `(f, s)`.
fn picard_sweep_from(
    model: &ModelSpec,
    grid: &TimeGrid,
    quad: &InitialQuadrature,
    f: &[f64],
    s: &[Vec<f64>],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = grid.n_steps();
    let m = model.n_traits();
    let dt = grid.dt();
    let w = model.traits().weights();
    let tables = exposure_tables(model, grid, f, &quad.ages);

    let mut f_new = vec![0.0; n + 1];
    let mut s_new = vec![vec![0.0; m]; n + 1];
    for i in 0..=n {
        let ti = grid.time(i);

        // Transported initial cohort.
        let mut g_f = 0.0;
        let mut g_s = vec![0.0; m];
        for (p, &a) in quad.ages.iter().enumerate() {
            let side = quad.sides[p];
            for j in 0..m {
                let mpj = quad.mass[p][j];
                if mpj == 0.0 {
                    continue;
                }
                let surv = (-tables.phi[p][j][i]).exp();
                g_f += mpj * lambda_at(model, side, a + ti, j) * surv;
                let gv = gamma_at(model, side, a + ti, j) * surv * mpj;
                if gv != 0.0 {
                    for (q, sq) in g_s.iter_mut().enumerate() {
                        *sq += gv * model.kernel(j, q);
                    }
                }
            }
        }

        // Boundary-born cohorts: product-corrected trapezoid over cells. The
        // age t_i - s decreases along s, so within a cell the left node takes
        // the left age-limit and the right node the right age-limit.
        let mut h_f = 0.0;
        let mut h_inner_gamma = vec![0.0; m];
        for j in 0..m {
            for k in 1..=i {
                let psi_lo = tables.psi[k - 1][j][i];
                let psi_hi = tables.psi[k][j][i];
                let base_lo = f[k - 1] * s[k - 1][j] * (-psi_lo).exp();
                let base_hi = f[k] * s[k][j] * (-psi_hi).exp();
                let age_lo = ti - grid.time(k - 1);
                let age_hi = ti - grid.time(k);
                let c = exp_cell_factor(psi_lo - psi_hi);
                let lam_cell = model.lambda_below(age_lo, j) * base_lo
                    + model.lambda(age_hi, j) * base_hi;
                let gam_cell =
                    model.gamma_below(age_lo, j) * base_lo + model.gamma(age_hi, j) * base_hi;
                h_f += w[j] * 0.5 * dt * c * lam_cell;
                h_inner_gamma[j] += 0.5 * dt * c * gam_cell;
            }
        }
        f_new[i] = g_f + h_f;
        for q in 0..m {
            let mut hq = g_s[q];
            for j in 0..m {
                hq += w[j] * model.kernel(j, q) * h_inner_gamma[j];
            }
            s_new[i][q] = hq;
        }
    }
    (f_new, s_new)
}

/// Exposure `∫_{t0}^{t1} F(r) γ(r - anchor, θ_j) dr` for off-grid endpoints:
/// cell-oriented trapezoid over the interior grid nodes plus partial end
/// cells. Ages increase along `r`, so cells pair γ's right limit at their
/// left node with the left limit at their right node.
fn exposure_between(
    sol: &LlnSolution,
    model: &ModelSpec,
    j: usize,
    anchor: f64,
    t0: f64,
    t1: f64,
) -> Result<f64, LlnError> {
    if t1 <= t0 {
        return Ok(0.0);
    }
    let grid = &sol.grid;
    let rate_above = |t: f64| -> Result<f64, LlnError> {
        Ok(interp(grid, &sol.f, t)? * model.gamma(t - anchor, j))
    };
    let rate_below = |t: f64| -> Result<f64, LlnError> {
        Ok(interp(grid, &sol.f, t)? * model.gamma_below(t - anchor, j))
    };
    let first = (t0 / grid.dt()).ceil() as usize;
    let last = ((t1 / grid.dt()).floor() as usize).min(grid.n_steps());
    let mut total = 0.0;
    if first > last || grid.time(last) <= t0 {
        return Ok(0.5 * (t1 - t0) * (rate_above(t0)? + rate_below(t1)?));
    }
    let tf = grid.time(first);
    if tf > t0 {
        total += 0.5 * (tf - t0) * (rate_above(t0)? + rate_below(tf)?);
    }
    for i in (first + 1)..=last {
        total += 0.5
            * grid.dt()
            * (rate_above(grid.time(i - 1))? + rate_below(grid.time(i))?);
    }
    let tl = grid.time(last);
    if t1 > tl + 1e-15 {
        total += 0.5 * (t1 - tl) * (rate_above(tl)? + rate_below(t1)?);
    }
    Ok(total)
}

/// Characteristic density `u_t(a, θ_j)` of the limit measure with respect to
/// `da ⊗ ν`: transported initial density for `a > t`, boundary inflow decayed
/// along its characteristic for `a <= t`.
pub fn density(
    sol: &LlnSolution,
    model: &ModelSpec,
    t: f64,
    a: f64,
    j: usize,
) -> Result<f64, LlnError> {
    if t > sol.grid.horizon() + 1e-12 || t < 0.0 {
        return Err(LlnError::Grid {
            t,
            horizon: sol.grid.horizon(),
        });
    }
    if a < 0.0 {
        return Ok(0.0);
    }
    if a > t {
        let (ages, trait_probs) = match model.initial() {
            InitialCondition::Parametric { ages, trait_probs } => (ages, trait_probs),
            InitialCondition::Empirical { .. } => return Err(LlnError::EmpiricalInitial),
        };
        let w = model.traits().weights()[j];
        let u0 = ages.density(a - t) * trait_probs[j] / w;
        if u0 == 0.0 {
            return Ok(0.0);
        }
        // exposure of a cohort of initial age a - t over [0, t]
        let expo = exposure_between(sol, model, j, -(a - t), 0.0, t)?;
        Ok(u0 * (-expo).exp())
    } else {
        let birth = t - a;
        let f_b = interp(&sol.grid, &sol.f, birth)?;
        let s_cols: Vec<f64> = sol.s.iter().map(|row| row[j]).collect();
        let s_b = interp(&sol.grid, &s_cols, birth)?;
        let expo = exposure_between(sol, model, j, birth, birth, t)?;
        Ok(f_b * s_b * (-expo).exp())
    }
}

/// Total mass of the limit measure at a grid time, using the solution's own
/// quadrature for the transported branch and the product-corrected rule for
/// the boundary branch. Equals 1 up to the scheme's consistency error.
pub fn mass(sol: &LlnSolution, model: &ModelSpec, i: usize) -> f64 {
    let n = sol.grid.n_steps();
    assert!(i <= n);
    let m = model.n_traits();
    let dt = sol.grid.dt();
    let w = model.traits().weights();
    let tables = exposure_tables(model, &sol.grid, &sol.f, &sol.quad.ages);

    let mut total = 0.0;
    for (p, _) in sol.quad.ages.iter().enumerate() {
        for j in 0..m {
            total += sol.quad.mass[p][j] * (-tables.phi[p][j][i]).exp();
        }
    }
    for j in 0..m {
        let mut prev = sol.f[0] * sol.s[0][j] * (-tables.psi[0][j][i]).exp();
        let mut psi_prev = tables.psi[0][j][i];
        for k in 1..=i {
            let psi_k = tables.psi[k][j][i];
            let cur = sol.f[k] * sol.s[k][j] * (-psi_k).exp();
            total += w[j] * 0.5 * dt * exp_cell_factor(psi_prev - psi_k) * (prev + cur);
            prev = cur;
            psi_prev = psi_k;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn solve(preset: &str, horizon: f64, dt: f64) -> (ModelSpec, LlnSolution) {
        let model = ModelSpec::from_toml(preset).unwrap();
        let sol = solve_lln(&model, &LlnParams::new(horizon, dt)).unwrap();
        (model, sol)
    }

    #[test]
    fn model_a_exact_fixed_point() {
        let (_, sol) = solve(presets::MODEL_A, 8.0, 0.05);
        for i in 0..sol.f.len() {
            assert!(
                (sol.f[i] - 0.5).abs() < 1e-10,
                "F[{i}] = {:.3e}",
                sol.f[i] - 0.5
            );
            assert!(
                (sol.s[i][0] - 1.0).abs() < 1e-10,
                "S[{i}] = {:.3e}",
                sol.s[i][0] - 1.0
            );
        }
    }

    #[test]
    fn gamma_zero_is_pure_transport() {
        let (model, sol) = solve(presets::GAMMA_ZERO, 4.0, 0.05);
        // F(t) = E_mu0[lambda(a0 + t)] against direct quadrature of the
        // initial measure (identical discretization of mu0).
        for &(i, t) in [(0usize, 0.0), (40, 2.0), (80, 4.0)].iter() {
            let direct: f64 = sol
                .quad
                .ages
                .iter()
                .enumerate()
                .map(|(p, &a)| sol.quad.mass[p][0] * lambda_at(&model, sol.quad.sides[p], a + t, 0))
                .sum();
            assert!(
                (sol.f[i] - direct).abs() < 1e-8,
                "t={t}: {} vs {direct}",
                sol.f[i]
            );
        }
        // susceptibility stays zero
        assert!(sol.s.iter().all(|row| row[0] == 0.0));
    }

    #[test]
    fn bounds_hold_along_the_solution() {
        let (model, sol) = solve(presets::MODEL_B_TWO_TRAIT, 8.0, 0.05);
        let w = model.traits().weights();
        for i in 0..sol.f.len() {
            assert!(sol.f[i] >= -1e-12 && sol.f[i] <= model.lambda_star() + 1e-8);
            let sw: f64 = (0..2).map(|j| sol.s[i][j] * w[j]).sum();
            assert!(sw <= 1.0 + 1e-8, "sum {sw}");
        }
    }

    #[test]
    fn residual_small_when_converged_and_detects_corruption() {
        let (model, sol) = solve(presets::MODEL_B, 8.0, 0.1);
        let (df, ds) = lln_residual(&sol, &model);
        assert!(df < 1e-10 && ds < 1e-10, "df {df} ds {ds}");

        let mut bad = sol.clone();
        bad.f[40] += 0.01;
        let (df, _) = lln_residual(&bad, &model);
        assert!(df >= 0.005, "perturbation residual {df}");
    }

    #[test]
    fn model_a_residual_machine_precision() {
        let (model, sol) = solve(presets::MODEL_A, 8.0, 0.05);
        let (df, ds) = lln_residual(&sol, &model);
        assert!(df < 1e-12 && ds < 1e-12, "df {df} ds {ds}");
    }

    #[test]
    fn density_model_a_closed_form() {
        let (model, sol) = solve(presets::MODEL_A, 8.0, 0.05);
        // boundary branch: u_t(a) = 0.5 e^{-0.5 a} for a <= t
        let u = density(&sol, &model, 5.0, 1.0, 0).unwrap();
        let expect = 0.5 * (-0.5f64).exp(); // 0.303265...
        assert!((u - expect).abs() < 1e-6, "u {u} expect {expect}");
    }

    #[test]
    fn density_gamma_zero_is_shift() {
        let (model, sol) = solve(presets::GAMMA_ZERO, 4.0, 0.05);
        for (t, a) in [(2.0, 3.0), (4.0, 4.5), (1.0, 1.25)] {
            let u = density(&sol, &model, t, a, 0).unwrap();
            let expect = (-(a - t) as f64).exp();
            assert!((u - expect).abs() < 1e-12, "u {u} expect {expect}");
        }
    }

    #[test]
    fn mass_conserved() {
        // Exact for the degenerate models; consistency-limited for model B.
        let (model, sol) = solve(presets::MODEL_A, 8.0, 0.05);
        for i in [0, 80, 160] {
            assert!((mass(&sol, &model, i) - 1.0).abs() < 1e-10);
        }
        let (model, sol) = solve(presets::GAMMA_ZERO, 8.0, 0.05);
        for i in [0, 80, 160] {
            assert!((mass(&sol, &model, i) - 1.0).abs() < 1e-12);
        }
        let (model, sol) = solve(presets::MODEL_B, 4.0, 0.0025);
        for i in [0, 800, 1600] {
            let m = mass(&sol, &model, i);
            assert!((m - 1.0).abs() < 1e-6, "mass {m} at node {i}");
        }
    }

    #[test]
    fn refinement_order_at_least_1_8() {
        let model = ModelSpec::from_toml(presets::MODEL_B).unwrap();
        let fine = solve_lln(&model, &LlnParams::new(8.0, 0.025)).unwrap();
        let mid = solve_lln(&model, &LlnParams::new(8.0, 0.05)).unwrap();
        let coarse = solve_lln(&model, &LlnParams::new(8.0, 0.1)).unwrap();
        // sup over the coarse nodes of successive differences
        let mut d_cm: f64 = 0.0;
        let mut d_mf: f64 = 0.0;
        for i in 0..coarse.f.len() {
            d_cm = d_cm.max((coarse.f[i] - mid.f[2 * i]).abs());
            d_mf = d_mf.max((mid.f[2 * i] - fine.f[4 * i]).abs());
        }
        let order = (d_cm / d_mf).log2();
        assert!(order >= 1.8, "order {order} (d_cm {d_cm:.3e}, d_mf {d_mf:.3e})");
    }

    #[test]
    fn nonconvergence_reports() {
        let model = ModelSpec::from_toml(presets::MODEL_B).unwrap();
        let mut params = LlnParams::new(8.0, 0.1);
        params.max_iters = 2;
        match solve_lln(&model, &params) {
            Err(LlnError::NonConvergence { .. }) => {}
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }
}
