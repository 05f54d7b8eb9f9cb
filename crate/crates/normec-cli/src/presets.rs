//! Canned experiment configurations: each is a complete TOML config that can
//! also serve as a starting point for custom files (`preset <name> --show`).

pub struct Preset {
    pub name: &'static str,
    pub about: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "counterexample-stall",
        about: "two-client parabolas where plain normalized descent freezes at \
                x = 2 while the error-compensated method drives the gradient down",
        toml: r#"name = "counterexample-stall"
rounds = 2000

[problem]
kind = "counterexample"

[grid]
algorithms = ["normec", "dpsgd-norm"]
gamma = [0.1]
beta = [0.25]
alpha = [0.0, 0.5]
"#,
    },
    Preset {
        name: "bound-suite",
        about: "twenty seeded quadratics run with conforming parameters; every \
                cell must pass the closed-form convergence bound",
        toml: r#"name = "bound-suite"
rounds = 5001

[problem]
kind = "bound-suite"

[grid]
"#,
    },
    Preset {
        name: "sweep-grid",
        about: "48-cell step-size x memory-scale x smoothing sweep on one \
                random quadratic; badly tuned corners stay in the data",
        toml: r#"name = "sweep-grid"
rounds = 300

[problem]
kind = "random-quadratic"
n = 4
d = 8
heterogeneity = 1.0
seed = 7

[grid]
algorithms = ["normec"]
gamma = [0.001, 0.01, 0.1, 1.0]
beta = [0.01, 0.1, 1.0, 10.0]
alpha = [0.01, 0.1, 1.0]
"#,
    },
    Preset {
        name: "ec-benefit",
        about: "error compensation against the memory-free normalized baseline \
                on a heterogeneous quadratic; compare min_grad_norm per cell",
        toml: r#"name = "ec-benefit"
rounds = 30000

[problem]
kind = "random-quadratic"
n = 5
d = 10
heterogeneity = 5.0
seed = 8042

[grid]
algorithms = ["normec-no-server-norm", "dpsgd-norm"]
gamma = [0.001, 0.01, 0.1, 1.0]
beta = [0.01, 0.1]
alpha = [0.01]
"#,
    },
    Preset {
        name: "private-demo",
        about: "noise calibrated to (epsilon = 8, delta = 1e-5) on a small \
                quadratic: the compensated method against clipped error \
                feedback, three repeats each",
        toml: r#"name = "private-demo"
rounds = 200
repeats = 3

[problem]
kind = "random-quadratic"
n = 4
d = 8
heterogeneity = 1.0
seed = 2718

[grid]
algorithms = ["normec", "dp-clip21"]
gamma = [0.05]
beta = [0.5]
alpha = [1.0]
tau = [1.0]

[privacy]
epsilon = 8.0
delta = 1e-5
"#,
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
