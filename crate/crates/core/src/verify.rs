//! Self-checks that need no trained artifacts: physics against closed
//! forms, autodiff against finite differences, reward normalization.

use puckmeta_autodiff::gradcheck::{central_difference, compare};
use puckmeta_autodiff::{forward_mlp, DiagonalGaussian, MlpSpec, ParamVars, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::normalize_rewards;
use crate::physics::{slide_trace, PuckState, Task, GRAVITY};
use crate::vec2::Vec2;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

/// Pure sliding friction: no rolling terms, so deceleration is exactly
/// `mu * g`.
fn isotropic(mu: f64) -> Task {
    Task {
        mu_x: mu,
        mu_y: mu,
        mu_torsional: 0.01,
        mu_rot_x: 0.0,
        mu_rot_y: 0.0,
        mass: 0.11,
        start_offset: Vec2::ZERO,
    }
}

fn stopping_distance() -> CheckResult {
    // semi-implicit Euler undershoots by about mu * g * dt / v0, so the
    // grid keeps v0 where that bias stays well under 1%
    let mut worst: f64 = 0.0;
    for v0 in [1.5, 2.0, 2.5, 3.0, 3.5] {
        for mu in [0.15, 0.35, 0.55, 0.75, 0.95] {
            let start = PuckState {
                position: Vec2::ZERO,
                velocity: Vec2::new(v0, 0.0),
                angular_velocity: 0.0,
            };
            let (end, _) = slide_trace(&isotropic(mu), start);
            let expected = v0 * v0 / (2.0 * mu * GRAVITY);
            worst = worst.max((end.position.norm() - expected).abs() / expected);
        }
    }
    check(
        "stopping distance",
        worst < 0.01,
        format!("worst relative error {worst:.2e} over a 5x5 grid"),
    )
}

fn energy_monotone() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut violations = 0;
    for _ in 0..100 {
        let task = Task::sample(&mut rng);
        let start = PuckState {
            position: Vec2::ZERO,
            velocity: Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            angular_velocity: rng.random_range(-30.0..30.0),
        };
        let (_, rows) = slide_trace(&task, start);
        let energy: Vec<f64> = rows.iter().map(|r| task.kinetic_energy(&r.state)).collect();
        violations += energy.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    }
    check(
        "sliding energy",
        violations == 0,
        format!("{violations} increases over 100 rollouts"),
    )
}

fn normalization() -> CheckResult {
    let r = normalize_rewards(&[1.0, 2.0, 3.0]);
    let degenerate = normalize_rewards(&[5.0, 5.0, 5.0]);
    let ok = match (&r, &degenerate) {
        (Ok(r), Ok(d)) => {
            let e = 1.5f64.sqrt();
            (r[0] + e).abs() < 1e-12
                && r[1].abs() < 1e-12
                && (r[2] - e).abs() < 1e-12
                && d.iter().all(|&x| x == 0.0)
        }
        _ => false,
    };
    check("reward normalization", ok, format!("{r:?}"))
}

struct MlpProblem {
    spec: MlpSpec,
    inputs: Tensor,
    actions: Tensor,
}

impl MlpProblem {
    fn loss<'t>(&self, tape: &'t Tape, vars: &ParamVars<'t>) -> Var<'t> {
        let x = tape.constant(self.inputs.clone());
        let mean = forward_mlp(vars, x, &self.spec).expect("forward");
        let log_std = tape.constant(Tensor::vector(vec![-0.3, 0.2]));
        let a = tape.constant(self.actions.clone());
        let lp = DiagonalGaussian::new(mean, log_std)
            .expect("shapes")
            .log_density(a)
            .expect("shapes");
        -lp.mean()
    }
}

fn mlp_gradient() -> CheckResult {
    let name = "mlp log-density gradient";
    let spec = MlpSpec::new("check", &[2, 8, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = spec.init(&mut rng, 1.0);
    let mut draw = |n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let problem = MlpProblem {
        spec,
        inputs: Tensor::matrix(4, 2, draw(8)).expect("shape"),
        actions: Tensor::matrix(4, 2, draw(8)).expect("shape"),
    };
    let tape = Tape::new();
    let vars = ParamVars::track(&tape, &params);
    let analytic = match tape.gradients(problem.loss(&tape, &vars), &vars) {
        Ok(g) => g,
        Err(e) => return check(name, false, e.to_string()),
    };
    let numeric = central_difference(&params, 1e-5, |p| {
        let t = Tape::new();
        let v = ParamVars::track(&t, p);
        problem.loss(&t, &v).item()
    });
    match numeric.and_then(|n| compare(&analytic, &n)) {
        Ok(report) => check(
            name,
            report.passes(1e-4),
            format!("max relative error {:.2e}", report.max_rel_error),
        ),
        Err(e) => check(name, false, e.to_string()),
    }
}

/// Runs every check; none of them needs trained artifacts.
pub fn run_checks() -> Vec<CheckResult> {
    vec![
        stopping_distance(),
        energy_monotone(),
        normalization(),
        mlp_gradient(),
    ]
}
