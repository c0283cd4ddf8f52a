//! Built-in model configurations used across tests, the CLI examples, and the
//! browser demo.

/// Single trait, constant infectivity at the bound, full susceptibility.
/// Degenerate: the force of infection is constant in time.
pub const MODEL_A: &str = r#"
[traits]
labels = ["only"]
weights = [1.0]

[lambda]
family = "constant"
value = 0.5

[gamma]
family = "constant"
value = 1.0

[kernel]
matrix = [[1.0]]

[initial]
age_family = "exponential"
rate = 1.0

[bounds]
lambda_star = 0.5
"#;

/// Single trait, windowed infectivity 2*1_{a<1}, delayed susceptibility
/// 1_{a>=2}, Exponential(1) initial ages.
pub const MODEL_B: &str = r#"
[traits]
labels = ["only"]
weights = [1.0]

[lambda]
family = "window"
value = 2.0
from = 0.0
until = 1.0

[gamma]
family = "step"
at = 2.0

[kernel]
matrix = [[1.0]]

[initial]
age_family = "exponential"
rate = 1.0

[bounds]
lambda_star = 2.0
"#;

/// Two-trait variant of model B with a non-trivial memory kernel.
pub const MODEL_B_TWO_TRAIT: &str = r#"
[traits]
labels = ["low", "high"]
weights = [0.5, 0.5]

[lambda]
family = "window"
value = 2.0
from = 0.0
until = 1.0

[gamma]
family = "step"
at = 2.0

[kernel]
matrix = [[1.6, 0.4], [0.6, 1.4]]

[initial]
age_family = "exponential"
rate = 1.0

[bounds]
lambda_star = 2.0
"#;

/// Permanently immune population: no events ever fire.
pub const GAMMA_ZERO: &str = r#"
[traits]
labels = ["only"]
weights = [1.0]

[lambda]
family = "window"
value = 2.0
from = 0.0
until = 1.0

[gamma]
family = "constant"
value = 0.0

[kernel]
matrix = [[1.0]]

[initial]
age_family = "exponential"
rate = 1.0

[bounds]
lambda_star = 2.0
"#;
