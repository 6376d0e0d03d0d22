use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// The nine activity classes, indexed 0..9 in the dataset's class order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    Walking,
    Stationary,
    SittingDown,
    StandingUpFromSitting,
    BendingFromSitting,
    BendingFromStanding,
    FallingWhileWalking,
    StandingUpFromGround,
    FallingWhileStanding,
}

impl Activity {
    pub const ALL: [Activity; 9] = [
        Activity::Walking,
        Activity::Stationary,
        Activity::SittingDown,
        Activity::StandingUpFromSitting,
        Activity::BendingFromSitting,
        Activity::BendingFromStanding,
        Activity::FallingWhileWalking,
        Activity::StandingUpFromGround,
        Activity::FallingWhileStanding,
    ];

    pub fn from_class(class: usize) -> Option<Activity> {
        Self::ALL.get(class).copied()
    }

    pub fn class(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).expect("listed")
    }

    /// Radial displacement (m) and relative reflectivity at normalized time `u ∈ [0, 1]`.
    ///
    /// Sit-down/stand-up and fall-while-standing/stand-up-from-ground are exact
    /// time reversals of each other.
    pub fn template(self, u: f64) -> (f64, f64) {
        use Activity::*;
        match self {
            Walking => (0.9 * u, 1.0),
            Stationary => (0.0, 1.0),
            SittingDown => {
                let s = smoothstep(u, 0.2, 0.7);
                (0.35 * s, 1.0 - 0.35 * s)
            }
            StandingUpFromSitting => SittingDown.template(1.0 - u),
            BendingFromSitting => {
                let b = bump(u, 0.2, 0.8);
                (0.25 * b, 0.65 * (1.0 - 0.2 * b))
            }
            BendingFromStanding => {
                let b = bump(u, 0.15, 0.85);
                (0.45 * b, 1.0 - 0.3 * b)
            }
            FallingWhileWalking => {
                let s = smoothstep(u, 0.55, 0.7);
                (0.45 * u + 0.6 * s, 1.0 - 0.6 * s)
            }
            StandingUpFromGround => FallingWhileStanding.template(1.0 - u),
            FallingWhileStanding => {
                let s = smoothstep(u, 0.35, 0.5);
                (0.7 * s, 1.0 - 0.6 * s)
            }
        }
    }

    /// Limb/breathing micro-motion: (amplitude m, frequency Hz).
    pub fn micro_motion(self) -> (f64, f64) {
        match self {
            Activity::Walking | Activity::FallingWhileWalking => (0.03, 2.0),
            Activity::Stationary => (0.004, 0.3),
            _ => (0.005, 0.3),
        }
    }
}

fn smoothstep(u: f64, a: f64, b: f64) -> f64 {
    let x = ((u - a) / (b - a)).clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn bump(u: f64, a: f64, b: f64) -> f64 {
    if u <= a || u >= b {
        0.0
    } else {
        (PI * (u - a) / (b - a)).sin().powi(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    Activity(Activity),
    /// Constant radial-direction velocity in m/s along the heading.
    Linear { speed: f64 },
}

/// Parametric target trajectory in the plane plus reflectivity over slow time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub motion: Motion,
    /// Position at t = 0, metres.
    pub start: [f64; 2],
    /// Direction of displacement, radians.
    pub heading: f64,
    /// Scales the template displacement.
    pub amplitude: f64,
    /// Time-warp factor around the window centre (1 = nominal tempo).
    pub timing: f64,
    /// Onset shift as a fraction of the duration.
    pub shift: f64,
    /// Seconds spanned by the template (u = t / duration).
    pub duration: f64,
    pub micro_amplitude: f64,
    pub micro_frequency: f64,
    pub micro_phase: f64,
    /// Base reflectivity α₀.
    pub alpha0: f64,
}

impl MotionProfile {
    /// Nominal profile of an activity with no perturbation.
    pub fn activity(activity: Activity, start: [f64; 2], heading: f64, duration: f64) -> Self {
        let (micro_amplitude, micro_frequency) = activity.micro_motion();
        MotionProfile {
            motion: Motion::Activity(activity),
            start,
            heading,
            amplitude: 1.0,
            timing: 1.0,
            shift: 0.0,
            duration,
            micro_amplitude,
            micro_frequency,
            micro_phase: 0.0,
            alpha0: 1.0,
        }
    }

    pub fn stationary(start: [f64; 2]) -> Self {
        Self::linear(start, 0.0, 0.0)
    }

    pub fn linear(start: [f64; 2], heading: f64, speed: f64) -> Self {
        MotionProfile {
            motion: Motion::Linear { speed },
            start,
            heading,
            amplitude: 1.0,
            timing: 1.0,
            shift: 0.0,
            duration: 1.0,
            micro_amplitude: 0.0,
            micro_frequency: 0.0,
            micro_phase: 0.0,
            alpha0: 1.0,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match self.motion {
            Motion::Activity(a) => Some(a.class()),
            Motion::Linear { .. } => None,
        }
    }

    fn warped(&self, t: f64) -> f64 {
        let u = t / self.duration;
        ((u - 0.5) * self.timing + 0.5 - self.shift).clamp(0.0, 1.0)
    }

    fn displacement_and_reflectivity(&self, t: f64) -> (f64, f64) {
        let (d, rho) = match self.motion {
            Motion::Activity(a) => {
                let (d, rho) = a.template(self.warped(t));
                (self.amplitude * d, rho)
            }
            Motion::Linear { speed } => (speed * t, 1.0),
        };
        let micro = self.micro_amplitude * (2.0 * PI * self.micro_frequency * t + self.micro_phase).sin();
        (d + micro, rho)
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        let (d, _) = self.displacement_and_reflectivity(t);
        [self.start[0] + d * self.heading.cos(), self.start[1] + d * self.heading.sin()]
    }

    /// Distance (m) from `node` to the target at slow time `t`.
    pub fn range(&self, node: [f64; 2], t: f64) -> f64 {
        let p = self.position(t);
        ((p[0] - node[0]).powi(2) + (p[1] - node[1]).powi(2)).sqrt()
    }

    /// α₀ scaled by the activity's reflectivity profile.
    pub fn reflectivity(&self, t: f64) -> f64 {
        self.alpha0 * self.displacement_and_reflectivity(t).1
    }
}
