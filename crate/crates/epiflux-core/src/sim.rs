//! Exact event-driven simulation of the interacting particle system, and of
//! the coupled limit individuals driven by the same marked candidate streams.
//!
//! Simulation is by thinning: candidates arrive at the population rate
//! `N λ* κ̄`; a candidate picks an individual uniformly, proposes a new trait
//! from the kernel envelope, and accepts with probability
//! `F^N(t) γ(a_k, θ_k) K(θ_k, θ̃) / (λ* sup_i K(θ_i, θ̃))`, which reproduces
//! the reinfection rate `F^N(t) γ(a_k, θ_k)` and the post-jump trait law
//! `K(θ_k, ·) ν` exactly. Ages advance analytically between events; no
//! discretization error enters anywhere.
//!
//! Randomness is split into one candidate stream (event times and the uniform
//! individual picks) and one mark substream per individual (proposed trait
//! and acceptance uniform). The marks of individual `k` are consumed once per
//! candidate aimed at `k`, whether or not the jump is accepted, which is what
//! makes the finite-`N` system and its limit twin couplable path by path.

use crate::error::SimError;
use crate::grid::{interp, TimeGrid};
use crate::model::ModelSpec;
use crate::rng::{splitmix64, Stream};

/// Live state of the `N`-individual system at time `t`.
#[derive(Debug, Clone)]
pub struct PopulationState {
    pub t: f64,
    /// Time of the last reset per individual; age = `t - reset_time`.
    reset_time: Vec<f64>,
    pub trait_idx: Vec<usize>,
    /// Reinfection counters `A^N_k(t)`.
    pub reinfections: Vec<u64>,
}

impl PopulationState {
    pub fn from_initial(draws: &[(f64, usize)]) -> Self {
        PopulationState {
            t: 0.0,
            reset_time: draws.iter().map(|(a, _)| -a).collect(),
            trait_idx: draws.iter().map(|(_, j)| *j).collect(),
            reinfections: vec![0; draws.len()],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.trait_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trait_idx.is_empty()
    }

    /// Age of individual `k` at the current time.
    #[inline]
    pub fn age(&self, k: usize) -> f64 {
        self.t - self.reset_time[k]
    }

    /// Advance time; ages grow at slope one.
    #[inline]
    pub fn advance(&mut self, t: f64) {
        debug_assert!(t >= self.t);
        self.t = t;
    }

    /// Reset individual `k` to age zero with a new trait.
    #[inline]
    pub fn jump(&mut self, k: usize, new_trait: usize) {
        self.reset_time[k] = self.t;
        self.trait_idx[k] = new_trait;
        self.reinfections[k] += 1;
    }

    pub fn ages(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.age(k)).collect()
    }
}

/// `F^N(t) = (1/N) Σ_k λ(a_k(t), θ_k(t))`.
pub fn force_of_infection(model: &ModelSpec, state: &PopulationState) -> f64 {
    let n = state.len() as f64;
    let sum: f64 = (0..state.len())
        .map(|k| model.lambda(state.age(k), state.trait_idx[k]))
        .sum();
    sum / n
}

/// Empirical mean susceptibility toward each trait node:
/// `S^N_j = (1/N) Σ_k γ(a_k, θ_k) K(θ_k, θ_j)`.
pub fn mean_susceptibility(model: &ModelSpec, state: &PopulationState) -> Vec<f64> {
    let n = state.len() as f64;
    let m = model.n_traits();
    let mut s = vec![0.0; m];
    for k in 0..state.len() {
        let g = model.gamma(state.age(k), state.trait_idx[k]);
        if g > 0.0 {
            for (j, sj) in s.iter_mut().enumerate() {
                *sj += g * model.kernel(state.trait_idx[k], j);
            }
        }
    }
    for sj in s.iter_mut() {
        *sj /= n;
    }
    s
}

/// One accepted reinfection.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub individual: usize,
    pub trait_before: usize,
    pub trait_after: usize,
    /// Age of infection at the jump moment (pre-jump).
    pub age_at_event: f64,
}

/// Snapshot of population summaries at one grid time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub force: f64,
    pub susceptibility: Vec<f64>,
    pub age_histogram: Vec<u64>,
}

/// Full output of one particle run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub n: usize,
    pub seed: u64,
    pub model_digest: String,
    pub horizon: f64,
    pub initial: Vec<(f64, usize)>,
    pub events: Vec<EventRecord>,
    pub snapshot_times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub age_bins: AgeBins,
}

/// Uniform histogram bins `[0, width), [width, 2 width), ...` plus overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeBins {
    pub width: f64,
    pub count: usize,
}

impl AgeBins {
    pub fn index(&self, age: f64) -> usize {
        ((age / self.width) as usize).min(self.count - 1)
    }

    fn histogram(&self, state: &PopulationState) -> Vec<u64> {
        let mut h = vec![0u64; self.count];
        for k in 0..state.len() {
            h[self.index(state.age(k))] += 1;
        }
        h
    }
}

impl Default for AgeBins {
    fn default() -> Self {
        AgeBins {
            width: 0.5,
            count: 40,
        }
    }
}

/// Marks of one candidate: proposed trait from the envelope and the
/// acceptance uniform. Consumed from the owner's substream per candidate.
struct MarkStreams {
    streams: Vec<Stream>,
}

impl MarkStreams {
    fn new(model: &ModelSpec, n: usize, seed: u64) -> Self {
        // Domain-separated from replica substreams via a fixed tag.
        let tag = splitmix64(seed ^ 0x6d61_726b_7321_0001);
        MarkStreams {
            streams: (0..n).map(|k| Stream::substream(tag, k as u64)).collect(),
        }
        .validate(model)
    }

    fn validate(self, _model: &ModelSpec) -> Self {
        self
    }

    #[inline]
    fn next(&mut self, model: &ModelSpec, k: usize) -> (usize, f64) {
        let s = &mut self.streams[k];
        let proposal = model.sample_envelope_trait(s);
        let u = s.uniform();
        (proposal, u)
    }
}

/// Exact draw of the particle system on `[0, T]`.
///
/// `snapshots` must lie inside the horizon and be sorted.
pub fn simulate(
    model: &ModelSpec,
    n: usize,
    horizon: f64,
    snapshot_times: &[f64],
    seed: u64,
) -> Result<SimOutput, SimError> {
    simulate_with_bins(model, n, horizon, snapshot_times, seed, AgeBins::default())
}

pub fn simulate_with_bins(
    model: &ModelSpec,
    n: usize,
    horizon: f64,
    snapshot_times: &[f64],
    seed: u64,
    age_bins: AgeBins,
) -> Result<SimOutput, SimError> {
    assert!(n >= 1 && horizon > 0.0);
    for &s in snapshot_times {
        if s > horizon + 1e-12 || s < 0.0 {
            return Err(SimError::SnapshotBeyondHorizon {
                snapshot: s,
                horizon,
            });
        }
    }

    let mut candidate_stream = Stream::substream(seed, 0);
    let mut marks = MarkStreams::new(model, n, seed);
    let initial = model.sample_initial(n, &mut Stream::substream(seed, 1));
    let mut state = PopulationState::from_initial(&initial);

    let total_rate = n as f64 * model.lambda_star() * model.kappa_bar();
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_snapshot = 0usize;

    let mut t = 0.0;
    loop {
        let dt = candidate_stream.exponential(total_rate);
        let t_next = t + dt;

        while next_snapshot < snapshot_times.len() && snapshot_times[next_snapshot] <= t_next {
            let ts = snapshot_times[next_snapshot];
            state.advance(ts);
            snapshots.push(take_snapshot(model, &state, &age_bins));
            next_snapshot += 1;
        }
        if t_next > horizon {
            break;
        }

        t = t_next;
        state.advance(t);
        let k = candidate_stream.index(n);
        let (proposal, u) = marks.next(model, k);

        let force = force_of_infection(model, &state);
        let age_k = state.age(k);
        let trait_k = state.trait_idx[k];
        let accept = force * model.gamma(age_k, trait_k) * model.kernel(trait_k, proposal)
            >= u * model.lambda_star() * model.kernel_sup(proposal);
        if accept {
            events.push(EventRecord {
                time: t,
                individual: k,
                trait_before: trait_k,
                trait_after: proposal,
                age_at_event: age_k,
            });
            state.jump(k, proposal);
        }
    }

    Ok(SimOutput {
        n,
        seed,
        model_digest: model.digest().to_string(),
        horizon,
        initial,
        events,
        snapshot_times: snapshot_times.to_vec(),
        snapshots,
        age_bins,
    })
}

fn take_snapshot(model: &ModelSpec, state: &PopulationState, bins: &AgeBins) -> Snapshot {
    Snapshot {
        t: state.t,
        force: force_of_infection(model, state),
        susceptibility: mean_susceptibility(model, state),
        age_histogram: bins.histogram(state),
    }
}

/// Path of one limit individual: reinfected at rate `F(t) γ(a, θ)` with trait
/// resampling from the kernel, driven by an explicit mark stream.
#[derive(Debug, Clone)]
pub struct IndividualPath {
    /// `(time, age_before, trait_before, trait_after)` per jump.
    pub jumps: Vec<(f64, f64, usize, usize)>,
    pub counter: u64,
}

/// Simulate one limit individual on `[0, T]` against a tabulated force of
/// infection, by the same thinning scheme as the particle system.
pub fn limit_individual(
    model: &ModelSpec,
    f_grid: &TimeGrid,
    f_values: &[f64],
    initial: (f64, usize),
    horizon: f64,
    stream: &mut Stream,
) -> Result<IndividualPath, SimError> {
    if f_grid.horizon() < horizon - 1e-12 {
        return Err(SimError::GridCoverage {
            covered: f_grid.horizon(),
            needed: horizon,
        });
    }
    let rate = model.lambda_star() * model.kappa_bar();
    let mut t = 0.0;
    let (mut age_offset, mut trait_idx) = (initial.0, initial.1);
    let mut reset = 0.0;
    let mut path = IndividualPath {
        jumps: Vec::new(),
        counter: 0,
    };
    loop {
        t += stream.exponential(rate);
        if t > horizon {
            break;
        }
        let proposal = model.sample_envelope_trait(stream);
        let u = stream.uniform();
        let age = age_offset + (t - reset);
        let force = interp(f_grid, f_values, t).map_err(|_| SimError::GridCoverage {
            covered: f_grid.horizon(),
            needed: t,
        })?;
        let accept = force * model.gamma(age, trait_idx) * model.kernel(trait_idx, proposal)
            >= u * model.lambda_star() * model.kernel_sup(proposal);
        if accept {
            path.jumps.push((t, age, trait_idx, proposal));
            trait_idx = proposal;
            age_offset = 0.0;
            reset = t;
            path.counter += 1;
        }
    }
    Ok(path)
}

/// Pathwise distance between a finite-`N` individual and its limit twin.
#[derive(Debug, Clone, Copy)]
pub struct CouplingDistance {
    /// `sup_{t<=T} |A^N_k(t) - A_k(t)|`.
    pub counter_sup: f64,
    /// `sup_{t<=T} |a^N_k(t) - a_k(t)|`.
    pub age_sup: f64,
}

/// Coupled simulation: the finite-`N` system and `N` limit individuals driven
/// by identical per-individual marked candidate streams; only the acceptance
/// tests differ (`F^N` against the current finite state, tabulated `F`
/// against the limit state).
pub fn simulate_coupled(
    model: &ModelSpec,
    n: usize,
    horizon: f64,
    f_grid: &TimeGrid,
    f_values: &[f64],
    seed: u64,
) -> Result<Vec<CouplingDistance>, SimError> {
    if f_grid.horizon() < horizon - 1e-12 {
        return Err(SimError::GridCoverage {
            covered: f_grid.horizon(),
            needed: horizon,
        });
    }
    let mut candidate_stream = Stream::substream(seed, 0);
    let mut marks = MarkStreams::new(model, n, seed);
    let initial = model.sample_initial(n, &mut Stream::substream(seed, 1));

    let mut fin = PopulationState::from_initial(&initial);
    let mut lim = PopulationState::from_initial(&initial);
    let mut dist = vec![
        CouplingDistance {
            counter_sup: 0.0,
            age_sup: 0.0,
        };
        n
    ];

    let total_rate = n as f64 * model.lambda_star() * model.kappa_bar();
    let mut t = 0.0;
    loop {
        t += candidate_stream.exponential(total_rate);
        if t > horizon {
            break;
        }
        fin.advance(t);
        lim.advance(t);
        let k = candidate_stream.index(n);
        let (proposal, u) = marks.next(model, k);
        let threshold = u * model.lambda_star() * model.kernel_sup(proposal);

        let force_fin = force_of_infection(model, &fin);
        let acc_fin = force_fin
            * model.gamma(fin.age(k), fin.trait_idx[k])
            * model.kernel(fin.trait_idx[k], proposal)
            >= threshold;
        let force_lim = interp(f_grid, f_values, t).map_err(|_| SimError::GridCoverage {
            covered: f_grid.horizon(),
            needed: t,
        })?;
        let acc_lim = force_lim
            * model.gamma(lim.age(k), lim.trait_idx[k])
            * model.kernel(lim.trait_idx[k], proposal)
            >= threshold;

        if acc_fin {
            fin.jump(k, proposal);
        }
        if acc_lim {
            lim.jump(k, proposal);
        }
        if acc_fin || acc_lim {
            // Both difference processes are piecewise constant between
            // accepted events, so the sup is attained right after an event.
            let d = &mut dist[k];
            let dc = (fin.reinfections[k] as f64 - lim.reinfections[k] as f64).abs();
            let da = (fin.age(k) - lim.age(k)).abs();
            d.counter_sup = d.counter_sup.max(dc);
            d.age_sup = d.age_sup.max(da);
        }
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn grid_times(horizon: f64, dt: f64) -> Vec<f64> {
        let n = (horizon / dt).round() as usize;
        (0..=n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn gamma_zero_never_jumps_and_ages_drift() {
        let model = ModelSpec::from_toml(presets::GAMMA_ZERO).unwrap();
        let out = simulate(&model, 200, 5.0, &grid_times(5.0, 1.0), 42).unwrap();
        assert!(out.events.is_empty());
        let init_ages: Vec<f64> = out.initial.iter().map(|(a, _)| *a).collect();
        let last = out.snapshots.last().unwrap();
        assert_eq!(last.t, 5.0);
        // age histogram mass conserved
        assert_eq!(last.age_histogram.iter().sum::<u64>(), 200);
        // re-simulate state to check exact drift
        let state = PopulationState::from_initial(&out.initial);
        let mut state = state;
        state.advance(5.0);
        for (k, a0) in init_ages.iter().enumerate() {
            assert_eq!(state.age(k), a0 + 5.0);
        }
    }

    #[test]
    fn model_a_force_is_exactly_constant() {
        let model = ModelSpec::from_toml(presets::MODEL_A).unwrap();
        let out = simulate(&model, 500, 10.0, &grid_times(10.0, 0.5), 7).unwrap();
        for snap in &out.snapshots {
            assert_eq!(snap.force, 0.5);
            assert_eq!(snap.age_histogram.iter().sum::<u64>(), 500);
        }
    }

    #[test]
    fn model_a_counters_are_poisson_rate_half() {
        // Constant lambda = 0.5 = lambda*, gamma = 1: every individual is
        // reinfected at rate exactly 0.5, so A_k(10) ~ Poisson(5).
        let model = ModelSpec::from_toml(presets::MODEL_A).unwrap();
        let n = 10_000;
        let out = simulate(&model, n, 10.0, &[10.0], 11).unwrap();
        let mut counts = vec![0u64; n];
        for e in &out.events {
            counts[e.individual] += 1;
        }
        let mean = counts.iter().sum::<u64>() as f64 / n as f64;
        let tol = 3.0 * (5.0 / n as f64).sqrt();
        assert!((mean - 5.0).abs() < tol, "mean {mean}, tol {tol}");
    }

    #[test]
    fn determinism_same_seed_same_events() {
        let model = ModelSpec::from_toml(presets::MODEL_B).unwrap();
        let a = simulate(&model, 300, 4.0, &grid_times(4.0, 1.0), 99).unwrap();
        let b = simulate(&model, 300, 4.0, &grid_times(4.0, 1.0), 99).unwrap();
        assert_eq!(a.events, b.events);
        let c = simulate(&model, 300, 4.0, &grid_times(4.0, 1.0), 100).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn event_times_strictly_increase_and_force_bounded() {
        let model = ModelSpec::from_toml(presets::MODEL_B_TWO_TRAIT).unwrap();
        let out = simulate(&model, 400, 6.0, &grid_times(6.0, 0.25), 5).unwrap();
        for w in out.events.windows(2) {
            assert!(w[1].time > w[0].time);
        }
        for snap in &out.snapshots {
            assert!(snap.force <= model.lambda_star() + 1e-12);
            let wsum: f64 = snap
                .susceptibility
                .iter()
                .zip(model.traits().weights())
                .map(|(s, w)| s * w)
                .sum();
            assert!(wsum <= 1.0 + 1e-12);
        }
        assert!(!out.events.is_empty());
    }

    #[test]
    fn force_direct_average() {
        // N=2, lambda(a) = min(a, 1) via table, ages (0.5, 2) -> 0.75
        let text = presets::MODEL_B.replace(
            "family = \"window\"\nvalue = 2.0\nfrom = 0.0\nuntil = 1.0",
            "family = \"table\"\nages = [0.0, 1.0]\nvalues = [0.0, 1.0]",
        );
        let model = ModelSpec::from_toml(&text).unwrap();
        let state = PopulationState::from_initial(&[(0.5, 0), (2.0, 0)]);
        assert!((force_of_infection(&model, &state) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn susceptibility_normalization_cases() {
        let model = ModelSpec::from_toml(presets::MODEL_A).unwrap();
        let state = PopulationState::from_initial(&[(1.0, 0), (3.0, 0)]);
        let s = mean_susceptibility(&model, &state);
        assert_eq!(s, vec![1.0]);
        let zero = ModelSpec::from_toml(presets::GAMMA_ZERO).unwrap();
        let s = mean_susceptibility(&zero, &state);
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn acceptance_probability_is_valid() {
        // F^N gamma K <= lambda* sup K: the thinning test never needs u > 1.
        let model = ModelSpec::from_toml(presets::MODEL_B_TWO_TRAIT).unwrap();
        let mut s = Stream::from_seed(3);
        for _ in 0..10_000 {
            let age = 4.0 * s.uniform();
            let i = s.index(2);
            let j = s.index(2);
            let ratio = model.lambda_star() * model.gamma(age, i) * model.kernel(i, j)
                / (model.lambda_star() * model.kernel_sup(j));
            assert!((0.0..=1.0).contains(&ratio));
        }
    }

    #[test]
    fn limit_individual_no_susceptibility_never_jumps() {
        let model = ModelSpec::from_toml(presets::GAMMA_ZERO).unwrap();
        let grid = TimeGrid::new(5.0, 0.5).unwrap();
        let f = vec![0.3; grid.len()];
        let mut s = Stream::from_seed(1);
        let path = limit_individual(&model, &grid, &f, (1.0, 0), 5.0, &mut s).unwrap();
        assert_eq!(path.counter, 0);
    }

    #[test]
    fn limit_individual_constant_rate_poisson_mean() {
        let model = ModelSpec::from_toml(presets::MODEL_A).unwrap();
        let grid = TimeGrid::new(6.0, 0.5).unwrap();
        let f = vec![0.5; grid.len()];
        let reps = 10_000;
        let mut total = 0u64;
        for r in 0..reps {
            let mut s = Stream::substream(777, r);
            total += limit_individual(&model, &grid, &f, (0.0, 0), 6.0, &mut s)
                .unwrap()
                .counter;
        }
        let mean = total as f64 / reps as f64;
        let expect = 3.0; // 0.5 * 6
        let tol = 3.0 * (expect / reps as f64).sqrt();
        assert!((mean - expect).abs() < tol, "mean {mean}");
    }

    #[test]
    fn coupled_gamma_zero_distances_vanish() {
        let model = ModelSpec::from_toml(presets::GAMMA_ZERO).unwrap();
        let grid = TimeGrid::new(4.0, 0.5).unwrap();
        let f = vec![0.1; grid.len()];
        let dist = simulate_coupled(&model, 100, 4.0, &grid, &f, 13).unwrap();
        for d in dist {
            assert_eq!(d.counter_sup, 0.0);
            assert_eq!(d.age_sup, 0.0);
        }
    }

    #[test]
    fn coupled_model_a_acceptance_tests_coincide() {
        let model = ModelSpec::from_toml(presets::MODEL_A).unwrap();
        let grid = TimeGrid::new(6.0, 0.05).unwrap();
        let f = vec![0.5; grid.len()];
        let dist = simulate_coupled(&model, 300, 6.0, &grid, &f, 29).unwrap();
        for d in dist {
            assert_eq!(d.counter_sup, 0.0);
            assert_eq!(d.age_sup, 0.0);
        }
    }

    #[test]
    fn snapshot_beyond_horizon_rejected() {
        let model = ModelSpec::from_toml(presets::MODEL_A).unwrap();
        match simulate(&model, 10, 1.0, &[2.0], 1) {
            Err(SimError::SnapshotBeyondHorizon { .. }) => {}
            other => panic!("expected snapshot error, got {other:?}"),
        }
    }
}
