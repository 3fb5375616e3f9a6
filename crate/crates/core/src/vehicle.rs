//! Vehicle state and the relative-coordinate transform.

use core::fmt;

pub type VehicleId = u64;

/// Controller mode of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VehicleMode {
    /// Solves the minimum-norm follower problem with its deadline.
    Follower,
    /// Heads a platoon; brakes towards `v_min`.
    Leader,
    /// Follower whose deadline constraint has been dropped.
    FollowerDeadlineRelaxed,
    /// Head that accelerates until its deadline is met again.
    LeaderRecovering,
}

impl VehicleMode {
    pub fn is_head(self) -> bool {
        matches!(self, Self::Leader | Self::LeaderRecovering)
    }

    /// Mode after becoming the head of a platoon.
    pub fn promoted(self) -> Self {
        match self {
            Self::Follower => Self::Leader,
            Self::FollowerDeadlineRelaxed => Self::LeaderRecovering,
            head => head,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Follower => "follower",
            Self::Leader => "leader",
            Self::FollowerDeadlineRelaxed => "follower_relaxed",
            Self::LeaderRecovering => "leader_recovering",
        }
    }
}

impl fmt::Display for VehicleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Longitudinal state of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    /// m
    pub position: f64,
    /// m/s
    pub speed: f64,
    /// Last applied acceleration (m/s²).
    pub accel: f64,
    pub spawn_time: f64,
    /// Absolute arrival deadline (s).
    pub deadline: f64,
    /// Position at which the vehicle leaves the road (m).
    pub exit_position: f64,
    pub mode: VehicleMode,
    pub platoon_id: u64,
}

/// Position, speed and acceleration relative to the vehicle ahead.
///
/// A vehicle without a predecessor reports its absolute state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeKinematics {
    pub p_hat: f64,
    pub v_hat: f64,
    pub a_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingError {
    pub vehicle: VehicleId,
    pub predecessor: VehicleId,
    pub vehicle_position: f64,
    pub predecessor_position: f64,
}

impl fmt::Display for OrderingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "vehicle {} at {} m is not behind its predecessor {} at {} m",
            self.vehicle, self.vehicle_position, self.predecessor, self.predecessor_position
        )
    }
}

impl core::error::Error for OrderingError {}

pub fn relative_kinematics(
    vehicle: &VehicleState,
    predecessor: Option<&VehicleState>,
) -> Result<RelativeKinematics, OrderingError> {
    match predecessor {
        None => Ok(RelativeKinematics {
            p_hat: vehicle.position,
            v_hat: vehicle.speed,
            a_hat: vehicle.accel,
        }),
        Some(pred) if pred.position > vehicle.position => Ok(RelativeKinematics {
            p_hat: vehicle.position - pred.position,
            v_hat: vehicle.speed - pred.speed,
            a_hat: vehicle.accel - pred.accel,
        }),
        Some(pred) => Err(OrderingError {
            vehicle: vehicle.id,
            predecessor: pred.id,
            vehicle_position: vehicle.position,
            predecessor_position: pred.position,
        }),
    }
}

#[cfg(test)]
pub(crate) fn test_vehicle(id: VehicleId, position: f64, speed: f64) -> VehicleState {
    VehicleState {
        id,
        position,
        speed,
        accel: 0.0,
        spawn_time: 0.0,
        deadline: 1.0e6,
        exit_position: 1.0e6,
        mode: VehicleMode::Follower,
        platoon_id: 0,
    }
}
