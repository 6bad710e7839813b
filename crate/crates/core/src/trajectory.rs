//! Blade trajectories and the synthetic strike dataset.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::physics::PUCK_RADIUS;
use crate::spline::CubicSpline;
use crate::vec2::Vec2;

pub const NUM_WAYPOINTS: usize = 17;
/// Three coordinates per waypoint: x, y, yaw.
pub const TRAJECTORY_DIM: usize = NUM_WAYPOINTS * 3;
pub const DURATION: f64 = 1.7;
/// |x| and |y| bound for every waypoint (m).
pub const WORKSPACE_BOUND: f64 = 2.0;

pub const SWING_SPEED_RANGE: (f64, f64) = (0.5, 3.0);
pub const BLADE_YAW_RANGE: (f64, f64) = (-0.6, 0.6);
/// Time at which a generated swing reaches the nominal puck position.
pub const CONTACT_TIME: f64 = 0.85;

/// Blade pose: centre of the blade and the heading of its striking face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub yaw: f64,
}

/// Two-dimensional latent action fed to the trajectory decoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentAction(pub [f64; 2]);

impl LatentAction {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// 17 blade waypoints at uniform times over [`DURATION`] seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Pose>,
}

/// Time of waypoint `i`.
pub fn waypoint_time(i: usize) -> f64 {
    i as f64 * DURATION / (NUM_WAYPOINTS - 1) as f64
}

impl Trajectory {
    pub fn new(waypoints: Vec<Pose>) -> Result<Self> {
        if waypoints.len() != NUM_WAYPOINTS {
            return Err(Error::Input(format!(
                "a trajectory needs {NUM_WAYPOINTS} waypoints, got {}",
                waypoints.len()
            )));
        }
        Ok(Trajectory { waypoints })
    }

    /// From `[x0, y0, yaw0, x1, ...]`.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != TRAJECTORY_DIM {
            return Err(Error::Input(format!(
                "expected {TRAJECTORY_DIM} values, got {}",
                values.len()
            )));
        }
        Trajectory::new(
            values
                .chunks_exact(3)
                .map(|c| Pose {
                    position: Vec2::new(c[0], c[1]),
                    yaw: c[2],
                })
                .collect(),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.waypoints
            .iter()
            .flat_map(|p| [p.position.x, p.position.y, p.yaw])
            .collect()
    }

    pub fn waypoints(&self) -> &[Pose] {
        &self.waypoints
    }

    pub fn duration(&self) -> f64 {
        DURATION
    }

    pub fn is_finite(&self) -> bool {
        self.waypoints
            .iter()
            .all(|p| p.position.is_finite() && p.yaw.is_finite())
    }

    pub fn within_workspace(&self) -> bool {
        self.waypoints.iter().all(|p| {
            p.position.x.abs() <= WORKSPACE_BOUND && p.position.y.abs() <= WORKSPACE_BOUND
        })
    }

    /// Finite and inside the workspace.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.within_workspace()
    }

    /// Time-parameterized cubic spline through the waypoints.
    pub fn path(&self) -> TrajectoryPath {
        let times: Vec<f64> = (0..NUM_WAYPOINTS).map(waypoint_time).collect();
        let coord = |f: fn(&Pose) -> f64| {
            let v: Vec<f64> = self.waypoints.iter().map(f).collect();
            CubicSpline::natural(&times, &v)
        };
        TrajectoryPath {
            x: coord(|p| p.position.x),
            y: coord(|p| p.position.y),
            yaw: coord(|p| p.yaw),
        }
    }

    /// Euclidean distance between the flattened coordinate vectors.
    pub fn distance(&self, other: &Trajectory) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryPath {
    x: CubicSpline,
    y: CubicSpline,
    yaw: CubicSpline,
}

impl TrajectoryPath {
    pub fn pose(&self, t: f64) -> Pose {
        Pose {
            position: Vec2::new(self.x.eval(t), self.y.eval(t)),
            yaw: self.yaw.eval(t),
        }
    }

    /// Translational velocity of the blade centre.
    pub fn velocity(&self, t: f64) -> Vec2 {
        Vec2::new(self.x.derivative(t), self.y.derivative(t))
    }
}

/// The two factors randomized when generating a strike.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingParams {
    /// Blade speed through the contact point (m/s).
    pub speed: f64,
    /// Heading of the blade face at contact (rad).
    pub yaw: f64,
}

impl SwingParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SwingParams {
            speed: rng.random_range(SWING_SPEED_RANGE.0..=SWING_SPEED_RANGE.1),
            yaw: rng.random_range(BLADE_YAW_RANGE.0..=BLADE_YAW_RANGE.1),
        }
    }

    /// Mid speed, square blade.
    pub fn nominal() -> Self {
        SwingParams {
            speed: 0.5 * (SWING_SPEED_RANGE.0 + SWING_SPEED_RANGE.1),
            yaw: 0.0,
        }
    }
}

/// Control knots of the swing: wind-up from rest, a constant-speed pass
/// through the puck, then follow-through back to rest. Values are the
/// displacement along +x per unit of swing speed.
const KNOT_TIMES: [f64; 7] = [0.0, 0.3, 0.6, CONTACT_TIME, 1.1, 1.4, DURATION];
const KNOT_PROFILE: [f64; 7] = [-0.55, -0.475, -0.25, 0.0, 0.25, 0.475, 0.55];
/// Fraction of the final yaw reached at each knot.
const KNOT_YAW: [f64; 7] = [0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0];

/// Builds one strike: the blade sweeps along +x with its face turned to
/// `yaw`, touching the nominal puck at [`CONTACT_TIME`].
pub fn swing_trajectory(params: SwingParams) -> Trajectory {
    // face line tangent to the puck at the origin when the centre is on y = 0
    let contact_x = -PUCK_RADIUS / params.yaw.cos();
    let xs: Vec<f64> = KNOT_PROFILE
        .iter()
        .map(|f| contact_x + params.speed * f)
        .collect();
    let yaws: Vec<f64> = KNOT_YAW.iter().map(|f| params.yaw * f).collect();
    let x = CubicSpline::natural(&KNOT_TIMES, &xs);
    let yaw = CubicSpline::natural(&KNOT_TIMES, &yaws);
    let waypoints = (0..NUM_WAYPOINTS)
        .map(|i| {
            let t = waypoint_time(i);
            Pose {
                position: Vec2::new(x.eval(t), 0.0),
                yaw: yaw.eval(t),
            }
        })
        .collect();
    Trajectory::new(waypoints).expect("fixed waypoint count")
}

/// `count` strikes with swing speed and blade yaw drawn uniformly.
pub fn generate_dataset<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Input("dataset size must be at least 1".into()));
    }
    Ok((0..count)
        .map(|_| swing_trajectory(SwingParams::sample(rng)))
        .collect())
}

pub const DEFAULT_DATASET_SIZE: usize = 7371;

fn column_names() -> Vec<String> {
    (0..NUM_WAYPOINTS)
        .flat_map(|i| [format!("w{i}_x"), format!("w{i}_y"), format!("w{i}_yaw")])
        .collect()
}

/// One row per trajectory, 51 columns plus a header.
pub fn write_dataset_csv<W: Write>(data: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(column_names())?;
    for t in data {
        w.write_record(t.to_flat().iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Vec<Trajectory>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header = r.headers()?.clone();
    if header.len() != TRAJECTORY_DIM {
        return Err(Error::Input(format!(
            "dataset has {} columns, expected {TRAJECTORY_DIM}",
            header.len()
        )));
    }
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Input(format!("bad number `{v}` in dataset")))
            })
            .collect::<Result<_>>()?;
        out.push(Trajectory::from_flat(&values)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrong_waypoint_count_is_rejected() {
        assert!(Trajectory::from_flat(&[0.0; 50]).is_err());
        assert!(Trajectory::new(vec![]).is_err());
    }

    #[test]
    fn swing_passes_through_contact_pose() {
        let t = swing_trajectory(SwingParams { speed: 2.0, yaw: 0.3 });
        let path = t.path();
        let pose = path.pose(CONTACT_TIME);
        let face = Vec2::from_angle(pose.yaw);
        let gap = -pose.position;
        assert!((gap.dot(face) - PUCK_RADIUS).abs() < 2e-3, "{pose:?}");
        let v = path.velocity(CONTACT_TIME);
        assert!((v.x - 2.0).abs() < 0.1, "{v:?}");
    }

    #[test]
    fn empty_dataset_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_dataset(&mut rng, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = generate_dataset(&mut rng, 5).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let back = read_dataset_csv(&buf[..]).unwrap();
        assert_eq!(back, data);
    }
}
