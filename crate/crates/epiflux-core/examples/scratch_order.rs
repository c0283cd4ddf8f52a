use epiflux_core::lln::{solve_lln, mass, LlnParams};
use epiflux_core::{presets, ModelSpec};

fn main() {
    let model = ModelSpec::from_toml(presets::MODEL_B).unwrap();
    for dt in [0.01, 0.005, 0.0025] {
        let sol = solve_lln(&model, &LlnParams::new(4.0, dt)).unwrap();
        let n = sol.grid.n_steps();
        let e0 = (mass(&sol, &model, 0) - 1.0).abs();
        let e1 = (mass(&sol, &model, n / 2) - 1.0).abs();
        let e2 = (mass(&sol, &model, n) - 1.0).abs();
        println!("dt={dt}: mass errors {e0:.3e} {e1:.3e} {e2:.3e}");
    }
}
