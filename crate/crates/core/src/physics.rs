//! Planar puck-striking simulation.
//!
//! The blade is a 0.30 m segment swept along a time-parameterized cubic
//! spline. At the first approaching contact with the puck disc an impulse
//! sets the puck's linear and angular velocity; the puck then slides under
//! anisotropic Coulomb friction until it comes to rest. There is exactly one
//! contact per episode.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;
use crate::vec2::Vec2;

pub const GRAVITY: f64 = 9.81;
pub const PUCK_RADIUS: f64 = 0.0382;
pub const BLADE_LENGTH: f64 = 0.30;
/// Effective mass of the blade in the impulse exchange (kg).
pub const BLADE_MASS: f64 = 1.0;
pub const RESTITUTION: f64 = 0.5;
/// Fraction of tangential blade speed converted into rim speed at impact.
pub const SPIN_COUPLING: f64 = 0.3;
/// Rate (per rad of spin) at which spin turns the velocity direction,
/// scaled by the torsional coefficient.
pub const SPIN_STEERING: f64 = 0.5;
pub const TIME_STEP: f64 = 1e-3;
pub const REST_SPEED: f64 = 1e-3;
pub const REST_SPIN: f64 = 1e-2;
pub const MAX_SLIDE_TIME: f64 = 10.0;

/// Centre of the target rectangle on the board (m).
pub const TARGET_CENTER: Vec2 = Vec2::new(1.0, 0.0);
/// Full width and height of the target rectangle (m).
pub const TARGET_SIZE: Vec2 = Vec2::new(0.50, 0.30);

/// Constant in the log term of the reward.
pub const REWARD_OFFSET: f64 = 1e-3;

/// Dynamic parameters of one environment instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Task {
    pub mu_x: f64,
    pub mu_y: f64,
    pub mu_torsional: f64,
    pub mu_rot_x: f64,
    pub mu_rot_y: f64,
    /// kg
    pub mass: f64,
    /// Offset of the puck's starting position from the origin (m).
    pub start_offset: Vec2,
}

/// Named held-out conditions.
pub const CONDITIONS: [&str; 4] = [
    "isotropic_low",
    "isotropic_medium",
    "anisotropic_low_x",
    "anisotropic_low_y",
];

impl Task {
    /// Draws a task from the randomization ranges.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Task {
        let offset = Normal::new(0.0, 0.02).expect("positive std");
        let mu_x = rng.random_range(0.15..=0.95);
        let ratio = rng.random_range(0.7..=1.3);
        Task {
            mu_x,
            mu_y: mu_x * ratio,
            mu_torsional: rng.random_range(0.001..=0.05),
            mu_rot_x: rng.random_range(0.01..=0.3),
            mu_rot_y: rng.random_range(0.01..=0.3),
            mass: rng.random_range(0.05..=0.5),
            start_offset: Vec2::new(offset.sample(rng), offset.sample(rng)),
        }
    }

    /// One of the fixed evaluation conditions listed in [`CONDITIONS`].
    pub fn fixed(name: &str) -> Result<Task> {
        let (mu_x, mu_y) = match name {
            "isotropic_low" => (0.15, 0.15),
            "isotropic_medium" => (0.4, 0.4),
            "anisotropic_low_x" => (0.2, 0.8),
            "anisotropic_low_y" => (0.8, 0.2),
            _ => {
                return Err(Error::UnknownCondition {
                    name: name.to_string(),
                    valid: CONDITIONS.join(", "),
                })
            }
        };
        Ok(Task {
            mu_x,
            mu_y,
            mu_torsional: 0.01,
            mu_rot_x: 0.1,
            mu_rot_y: 0.1,
            mass: 0.110,
            start_offset: Vec2::ZERO,
        })
    }

    /// Whether every parameter lies in the randomization range.
    pub fn in_randomization_range(&self) -> bool {
        (0.15..=0.95).contains(&self.mu_x)
            && self.mu_y >= 0.7 * self.mu_x - 1e-12
            && self.mu_y <= 1.3 * self.mu_x + 1e-12
            && (0.001..=0.05).contains(&self.mu_torsional)
            && (0.01..=0.3).contains(&self.mu_rot_x)
            && (0.01..=0.3).contains(&self.mu_rot_y)
            && (0.05..=0.5).contains(&self.mass)
    }

    pub fn start_position(&self) -> Vec2 {
        self.start_offset
    }

    fn moment_of_inertia(&self) -> f64 {
        0.5 * self.mass * PUCK_RADIUS * PUCK_RADIUS
    }

    pub fn kinetic_energy(&self, state: &PuckState) -> f64 {
        0.5 * self.mass * state.velocity.norm_sq()
            + 0.5 * self.moment_of_inertia() * state.angular_velocity * state.angular_velocity
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PuckState {
    pub position: Vec2,
    pub velocity: Vec2,
    /// rad/s
    pub angular_velocity: f64,
}

impl PuckState {
    pub fn at_rest(position: Vec2) -> Self {
        PuckState {
            position,
            velocity: Vec2::ZERO,
            angular_velocity: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite() && self.angular_velocity.is_finite()
    }
}

/// Target position for the puck.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Goal {
    pub target: Vec2,
}

impl Goal {
    pub fn new(x: f64, y: f64) -> Self {
        Goal {
            target: Vec2::new(x, y),
        }
    }

    /// Uniform over the target rectangle.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Goal {
        let half = TARGET_SIZE * 0.5;
        Goal::new(
            TARGET_CENTER.x + rng.random_range(-half.x..=half.x),
            TARGET_CENTER.y + rng.random_range(-half.y..=half.y),
        )
    }

    pub fn in_target_region(&self) -> bool {
        let d = self.target - TARGET_CENTER;
        let half = TARGET_SIZE * 0.5;
        d.x.abs() <= half.x + 1e-12 && d.y.abs() <= half.y + 1e-12
    }

    /// Affine map of the target rectangle onto `[-1, 1]^2`.
    pub fn normalized(&self) -> Vec2 {
        let d = self.target - TARGET_CENTER;
        let half = TARGET_SIZE * 0.5;
        Vec2::new(d.x / half.x, d.y / half.y)
    }

    pub fn from_normalized(n: Vec2) -> Goal {
        let half = TARGET_SIZE * 0.5;
        Goal {
            target: Vec2::new(TARGET_CENTER.x + n.x * half.x, TARGET_CENTER.y + n.y * half.y),
        }
    }
}

/// `-d^2 - ln(d + 0.001)` with `d` the distance from the puck to the goal.
pub fn reward(final_state: &PuckState, goal: &Goal) -> f64 {
    reward_at_distance((final_state.position - goal.target).norm())
}

pub fn reward_at_distance(d: f64) -> f64 {
    -d * d - (d + REWARD_OFFSET).ln()
}

/// Impulse applied at the first blade contact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub time: f64,
    pub blade_velocity: Vec2,
    /// Unit normal pointing from the blade into the puck.
    pub normal: Vec2,
    pub puck_velocity: Vec2,
    pub spin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrikeOutcome {
    pub initial: PuckState,
    pub contact: Option<Contact>,
    pub final_state: PuckState,
}

/// One row of a per-step sliding trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub state: PuckState,
}

/// Final rest state of the puck after executing `trajectory` under `task`.
pub fn execute_strike(task: &Task, trajectory: &Trajectory) -> Result<PuckState> {
    Ok(simulate_strike(task, trajectory)?.final_state)
}

/// Full strike simulation including the contact record.
pub fn simulate_strike(task: &Task, trajectory: &Trajectory) -> Result<StrikeOutcome> {
    simulate_strike_with(task, trajectory, |_| {})
}

/// As [`simulate_strike`], calling `observe` for every sliding step.
pub fn simulate_strike_with(
    task: &Task,
    trajectory: &Trajectory,
    observe: impl FnMut(&TraceRow),
) -> Result<StrikeOutcome> {
    if !trajectory.is_finite() {
        return Err(Error::Input("trajectory contains non-finite waypoints".into()));
    }
    let initial = PuckState::at_rest(task.start_position());
    let Some(contact) = find_contact(task, trajectory, initial.position) else {
        return Ok(StrikeOutcome {
            initial,
            contact: None,
            final_state: initial,
        });
    };
    let launched = PuckState {
        position: initial.position,
        velocity: contact.puck_velocity,
        angular_velocity: contact.spin,
    };
    let final_state = slide_with(task, launched, contact.time, observe);
    Ok(StrikeOutcome {
        initial,
        contact: Some(contact),
        final_state,
    })
}

/// Sweeps the blade and returns the first approaching contact with a puck
/// resting at `puck`.
pub fn find_contact(task: &Task, trajectory: &Trajectory, puck: Vec2) -> Option<Contact> {
    let path = trajectory.path();
    let steps = (trajectory.duration() / TIME_STEP).round() as usize;
    for step in 0..=steps {
        let t = step as f64 * TIME_STEP;
        let pose = path.pose(t);
        let face = Vec2::from_angle(pose.yaw);
        let along = face.perp();
        let rel = puck - pose.position;
        let s = rel.dot(along).clamp(-0.5 * BLADE_LENGTH, 0.5 * BLADE_LENGTH);
        let closest = pose.position + along * s;
        let gap = puck - closest;
        let dist = gap.norm();
        if dist > PUCK_RADIUS {
            continue;
        }
        let blade_velocity = path.velocity(t);
        let normal = if dist > 1e-12 {
            gap * (1.0 / dist)
        } else if blade_velocity.dot(face) >= 0.0 {
            face
        } else {
            -face
        };
        let approach = blade_velocity.dot(normal);
        if approach <= 0.0 {
            continue;
        }
        let gain = (1.0 + RESTITUTION) * BLADE_MASS / (BLADE_MASS + task.mass);
        let tangent = normal.perp();
        return Some(Contact {
            time: t,
            blade_velocity,
            normal,
            puck_velocity: normal * (gain * approach),
            spin: SPIN_COUPLING * blade_velocity.dot(tangent) / PUCK_RADIUS,
        });
    }
    None
}

/// Integrates free sliding from `state` until rest or the time cap.
pub fn slide(task: &Task, state: PuckState) -> PuckState {
    slide_with(task, state, 0.0, |_| {})
}

/// Sliding with a per-step callback; also returns the trace.
pub fn slide_trace(task: &Task, state: PuckState) -> (PuckState, Vec<TraceRow>) {
    let mut rows = Vec::new();
    let end = slide_with(task, state, 0.0, |r| rows.push(*r));
    (end, rows)
}

fn at_rest(state: &PuckState) -> bool {
    state.velocity.norm() < REST_SPEED && state.angular_velocity.abs() < REST_SPIN
}

/// Semi-implicit Euler: velocities are updated first, then positions move
/// with the new velocity. Friction never reverses a velocity component or
/// the spin, so kinetic energy cannot grow.
fn slide_with(
    task: &Task,
    mut state: PuckState,
    t0: f64,
    mut observe: impl FnMut(&TraceRow),
) -> PuckState {
    let dt = TIME_STEP;
    let decel_x = GRAVITY * (task.mu_x + task.mu_rot_x);
    let decel_y = GRAVITY * (task.mu_y + task.mu_rot_y);
    let spin_decay = task.mu_torsional * GRAVITY / PUCK_RADIUS;
    let max_steps = (MAX_SLIDE_TIME / dt).round() as usize;
    let mut t = t0;
    observe(&TraceRow { t, state });
    for _ in 0..max_steps {
        if at_rest(&state) {
            break;
        }
        let mut v = state.velocity;
        let omega = state.angular_velocity;

        // spin turns the direction of travel without changing speed
        if omega != 0.0 {
            v = v.rotated(SPIN_STEERING * task.mu_torsional * omega * dt);
        }

        let speed = v.norm();
        if speed > 0.0 {
            let dvx = decel_x * v.x.abs() / speed * dt;
            let dvy = decel_y * v.y.abs() / speed * dt;
            v.x = v.x.signum() * (v.x.abs() - dvx).max(0.0);
            v.y = v.y.signum() * (v.y.abs() - dvy).max(0.0);
        }
        let new_omega = omega.signum() * (omega.abs() - spin_decay * dt).max(0.0);

        state.velocity = v;
        state.angular_velocity = new_omega;
        state.position = state.position + v * dt;
        t += dt;
        observe(&TraceRow { t, state });
    }
    state
}

/// Writes a sliding trace as CSV rows `t,x,y,vx,vy,omega`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y", "vx", "vy", "omega"])?;
    for r in rows {
        w.write_record(&[
            r.t.to_string(),
            r.state.position.x.to_string(),
            r.state.position.y.to_string(),
            r.state.velocity.x.to_string(),
            r.state.velocity.y.to_string(),
            r.state.angular_velocity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_conditions_match_table() {
        let low = Task::fixed("isotropic_low").unwrap();
        assert_eq!(
            low,
            Task {
                mu_x: 0.15,
                mu_y: 0.15,
                mu_torsional: 0.01,
                mu_rot_x: 0.1,
                mu_rot_y: 0.1,
                mass: 0.110,
                start_offset: Vec2::ZERO,
            }
        );
        let ax = Task::fixed("anisotropic_low_x").unwrap();
        assert_eq!((ax.mu_x, ax.mu_y), (0.2, 0.8));
        let ay = Task::fixed("anisotropic_low_y").unwrap();
        assert_eq!((ay.mu_x, ay.mu_y), (0.8, 0.2));
        let med = Task::fixed("isotropic_medium").unwrap();
        assert_eq!((med.mu_x, med.mu_y), (0.4, 0.4));
    }

    #[test]
    fn unknown_condition_lists_valid_names() {
        let err = Task::fixed("icy").unwrap_err().to_string();
        for name in CONDITIONS {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn reward_values() {
        assert!((reward_at_distance(0.0) - 6.907_755_278_982_137).abs() < 1e-12);
        assert!((reward_at_distance(1.0) + 1.000_999_500_333_083).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let r = reward_at_distance(i as f64 * 0.01);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn goals_normalize_corners_to_corners() {
        for (sx, sy) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            let g = Goal::new(1.0 + 0.25 * sx, 0.15 * sy);
            let n = g.normalized();
            assert!((n.x - sx).abs() < 1e-12 && (n.y - sy).abs() < 1e-12);
            let back = Goal::from_normalized(n);
            assert!((back.target - g.target).norm() < 1e-12);
        }
    }

    #[test]
    fn spin_only_state_stops_spinning() {
        let task = Task::fixed("isotropic_low").unwrap();
        let s = PuckState {
            position: Vec2::ZERO,
            velocity: Vec2::ZERO,
            angular_velocity: 3.0,
        };
        let end = slide(&task, s);
        assert_eq!(end.position, Vec2::ZERO);
        assert!(end.angular_velocity.abs() < REST_SPIN);
    }

    #[test]
    fn sliding_is_capped() {
        let task = Task {
            mu_x: 0.0,
            mu_y: 0.0,
            mu_torsional: 0.0,
            mu_rot_x: 0.0,
            mu_rot_y: 0.0,
            mass: 0.1,
            start_offset: Vec2::ZERO,
        };
        let s = PuckState {
            position: Vec2::ZERO,
            velocity: Vec2::new(0.1, 0.0),
            angular_velocity: 0.0,
        };
        let end = slide(&task, s);
        assert!((end.position.x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_tasks_are_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(Task::sample(&mut rng).in_randomization_range());
        }
    }
}
