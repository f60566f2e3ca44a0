//! Bilateral virtual-coupling controller between the leader device and the
//! follower's graspable points.
//!
//! Leader positions are mapped into the follower frame by a rotation about
//! the vertical axis, a uniform scale and an offset. While the gripper holds
//! one of the graspable points, a spring-damper acts between the mapped
//! leader position and that point: one force is rotated back and rendered to
//! the operator, the other is turned into joint torques through the point
//! Jacobian.

use nalgebra::{Matrix3, Matrix3x6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::kinematics::{GraspPoint, GraspablePoints};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameMap {
    /// Rotation about `+z`, rad.
    pub theta: f64,
    pub scale: f64,
    pub offset: [f64; 3],
    /// `+1` rotates counter-clockwise seen from above (column-vector
    /// convention), `-1` flips the sense.
    pub rotation_sign: f64,
}

impl Default for FrameMap {
    fn default() -> Self {
        Self {
            theta: std::f64::consts::FRAC_PI_4,
            scale: 10.0,
            offset: [0.34, 0.0, 1.0],
            rotation_sign: 1.0,
        }
    }
}

impl FrameMap {
    pub fn rotation(&self) -> Matrix3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.rotation_sign * self.theta).into_inner()
    }

    pub fn offset(&self) -> Vector3<f64> {
        Vector3::from(self.offset)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(format!("frame scale must be > 0, got {}", self.scale));
        }
        if self.rotation_sign != 1.0 && self.rotation_sign != -1.0 {
            return Err("rotation_sign must be +1 or -1".into());
        }
        Ok(())
    }
}

pub fn map_leader_to_follower(x_leader: &Vector3<f64>, map: &FrameMap) -> Vector3<f64> {
    map.rotation() * x_leader * map.scale + map.offset()
}

pub fn map_follower_to_leader(x_follower: &Vector3<f64>, map: &FrameMap) -> Vector3<f64> {
    map.rotation().transpose() * (x_follower - map.offset()) / map.scale
}

/// Time derivative of the position map.
pub fn map_leader_velocity(v_leader: &Vector3<f64>, map: &FrameMap) -> Vector3<f64> {
    map.rotation() * v_leader * map.scale
}

/// Forces are rotated only; the position scale does not apply to them.
pub fn rotate_force_to_leader(force: &Vector3<f64>, map: &FrameMap) -> Vector3<f64> {
    map.rotation().transpose() * force
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingGains {
    /// Leader-side stiffness, N/m.
    pub p_leader: f64,
    /// Leader-side damping, N·s/m.
    pub b_leader: f64,
    /// Follower-side stiffness, N/m.
    pub p_follower: f64,
    /// Follower-side damping, N·s/m.
    pub b_follower: f64,
}

impl Default for CouplingGains {
    fn default() -> Self {
        Self {
            p_leader: 30.0,
            b_leader: 0.1,
            p_follower: 80.0,
            b_follower: 4.0,
        }
    }
}

/// Spring-damper forces between the mapped leader point and the follower
/// point. Returns `(leader force in follower frame, follower force)`.
pub fn coupling_forces(
    x_mapped: &Vector3<f64>,
    v_mapped: &Vector3<f64>,
    x_point: &Vector3<f64>,
    v_point: &Vector3<f64>,
    gains: &CouplingGains,
) -> (Vector3<f64>, Vector3<f64>) {
    let f_leader = -(x_mapped - x_point) * gains.p_leader - (v_mapped - v_point) * gains.b_leader;
    let f_follower =
        -(x_point - x_mapped) * gains.p_follower - (v_point - v_mapped) * gains.b_follower;
    (f_leader, f_follower)
}

/// `J^T F`, with every component clamped to `±tau_max`.
pub fn force_to_torques(jacobian: &Matrix3x6<f64>, force: &Vector3<f64>, tau_max: f64) -> Vector6<f64> {
    (jacobian.transpose() * force).map(|t| t.clamp(-tau_max, tau_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grab {
    Free,
    Near(GraspPoint),
    Engaged(GraspPoint),
}

impl Grab {
    pub fn engaged(&self) -> Option<GraspPoint> {
        match self {
            Grab::Engaged(p) => Some(*p),
            _ => None,
        }
    }

    /// Compact wire/log code: 0 free, 1/2 near elbow/wrist, 3/4 engaged elbow/wrist.
    pub fn code(&self) -> u8 {
        match self {
            Grab::Free => 0,
            Grab::Near(GraspPoint::Elbow) => 1,
            Grab::Near(GraspPoint::Wrist) => 2,
            Grab::Engaged(GraspPoint::Elbow) => 3,
            Grab::Engaged(GraspPoint::Wrist) => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Grab::Free,
            1 => Grab::Near(GraspPoint::Elbow),
            2 => Grab::Near(GraspPoint::Wrist),
            3 => Grab::Engaged(GraspPoint::Elbow),
            4 => Grab::Engaged(GraspPoint::Wrist),
            _ => return None,
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Grab::Free => "free",
            Grab::Near(GraspPoint::Elbow) => "near_elbow",
            Grab::Near(GraspPoint::Wrist) => "near_wrist",
            Grab::Engaged(GraspPoint::Elbow) => "engaged_elbow",
            Grab::Engaged(GraspPoint::Wrist) => "engaged_wrist",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        (0..5).map(|c| Grab::from_code(c).unwrap()).find(|g| g.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingConfig {
    pub map: FrameMap,
    pub gains: CouplingGains,
    /// Grab range around a graspable point, m.
    pub grab_radius: f64,
    /// Per-joint torque clamp, N·m.
    pub tau_max: f64,
    /// Optional release when the coupling stretch exceeds this distance, m.
    pub breakaway_distance: Option<f64>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            map: FrameMap::default(),
            gains: CouplingGains::default(),
            grab_radius: 0.10,
            tau_max: 30.0,
            breakaway_distance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingState {
    pub grab: Grab,
    pub grip_was_closed: bool,
    pub last_force_leader: Vector3<f64>,
    pub last_force_follower: Vector3<f64>,
    pub last_tau: Vector6<f64>,
}

impl Default for CouplingState {
    fn default() -> Self {
        Self {
            grab: Grab::Free,
            grip_was_closed: false,
            last_force_leader: Vector3::zeros(),
            last_force_follower: Vector3::zeros(),
            last_tau: Vector6::zeros(),
        }
    }
}

fn nearest_point(x: &Vector3<f64>, points: &GraspablePoints) -> (GraspPoint, f64) {
    let de = (x - points.elbow).norm();
    let dw = (x - points.wrist).norm();
    if dw < de {
        (GraspPoint::Wrist, dw)
    } else {
        (GraspPoint::Elbow, de)
    }
}

/// Grab state machine. Engagement happens only on the open-to-closed gripper
/// edge while the nearest point is within `grab_radius`; an engaged point is
/// held regardless of distance until the gripper opens (or the optional
/// breakaway distance is exceeded).
pub fn update_grab_state(
    state: &CouplingState,
    x_mapped: &Vector3<f64>,
    grip_closed: bool,
    points: &GraspablePoints,
    cfg: &CouplingConfig,
) -> CouplingState {
    let closing = grip_closed && !state.grip_was_closed;
    let (nearest, dist) = nearest_point(x_mapped, points);
    let in_range = dist <= cfg.grab_radius;
    let grab = match state.grab {
        Grab::Engaged(p) => {
            let stretched = cfg
                .breakaway_distance
                .is_some_and(|d| (x_mapped - points.get(p)).norm() > d);
            if !grip_closed || stretched {
                Grab::Free
            } else {
                Grab::Engaged(p)
            }
        }
        Grab::Free | Grab::Near(_) => {
            if !in_range {
                Grab::Free
            } else if closing {
                Grab::Engaged(nearest)
            } else {
                Grab::Near(nearest)
            }
        }
    };
    CouplingState {
        grab,
        grip_was_closed: grip_closed,
        ..*state
    }
}

/// Everything the controller needs from one tick of leader and follower state.
#[derive(Debug, Clone, Copy)]
pub struct CouplingInput<'a> {
    pub leader_pos: Vector3<f64>,
    pub leader_vel: Vector3<f64>,
    pub grip_closed: bool,
    pub points: GraspablePoints,
    pub elbow_jacobian: &'a Matrix3x6<f64>,
    pub wrist_jacobian: &'a Matrix3x6<f64>,
    pub qdot: Vector6<f64>,
    /// False disables grabbing entirely (visual-demonstration condition).
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingOutput {
    pub x_mapped: Vector3<f64>,
    /// Leader-side force already rotated into the leader frame.
    pub force_leader: Vector3<f64>,
    pub force_follower: Vector3<f64>,
    pub tau: Vector6<f64>,
}

/// One controller tick: grab update, coupling forces and torque mapping.
pub fn controller_step(
    state: &CouplingState,
    input: &CouplingInput<'_>,
    cfg: &CouplingConfig,
) -> (CouplingState, CouplingOutput) {
    let x_mapped = map_leader_to_follower(&input.leader_pos, &cfg.map);
    let mut next = if input.enabled {
        update_grab_state(state, &x_mapped, input.grip_closed, &input.points, cfg)
    } else {
        CouplingState {
            grab: Grab::Free,
            grip_was_closed: input.grip_closed,
            ..*state
        }
    };
    let (f_leader, f_follower, tau) = match next.grab.engaged() {
        Some(point) => {
            let jac = match point {
                GraspPoint::Elbow => input.elbow_jacobian,
                GraspPoint::Wrist => input.wrist_jacobian,
            };
            let v_mapped = map_leader_velocity(&input.leader_vel, &cfg.map);
            let v_point = jac * input.qdot;
            let (fs, fa) = coupling_forces(
                &x_mapped,
                &v_mapped,
                &input.points.get(point),
                &v_point,
                &cfg.gains,
            );
            (fs, fa, force_to_torques(jac, &fa, cfg.tau_max))
        }
        None => (Vector3::zeros(), Vector3::zeros(), Vector6::zeros()),
    };
    let force_leader = rotate_force_to_leader(&f_leader, &cfg.map);
    next.last_force_leader = force_leader;
    next.last_force_follower = f_follower;
    next.last_tau = tau;
    (
        next,
        CouplingOutput {
            x_mapped,
            force_leader,
            force_follower: f_follower,
            tau,
        },
    )
}
