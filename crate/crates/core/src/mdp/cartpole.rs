use rand::Rng;
use serde::{Deserialize, Serialize};

/// Pole-on-cart dynamics integrated with explicit Euler steps.
///
/// Three actions: 0 applies no force, 1 pushes left, 2 pushes right. Every
/// step taken while the pole is up pays 1. The episode ends once the cart
/// leaves `±x_limit` or the pole tilts beyond `±theta_limit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartPole {
    pub gravity: f64,
    pub force_mag: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub dt: f64,
    pub x_limit: f64,
    pub theta_limit: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            force_mag: 10.0,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            dt: 0.02,
            x_limit: 2.4,
            theta_limit: 12.0_f64.to_radians(),
        }
    }
}

pub const NO_FORCE: usize = 0;
pub const PUSH_LEFT: usize = 1;
pub const PUSH_RIGHT: usize = 2;

impl CartPole {
    pub const ACTIONS: usize = 3;

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        std::array::from_fn(|_| rng.random_range(-0.05..0.05))
    }

    /// Integrates one step. Returns the next state and whether it is out of bounds.
    pub fn integrate(&self, s: [f64; 4], action: usize) -> ([f64; 4], bool) {
        let [x, x_dot, theta, theta_dot] = s;
        let force = match action {
            PUSH_LEFT => -self.force_mag,
            PUSH_RIGHT => self.force_mag,
            _ => 0.0,
        };
        let (sin, cos) = theta.sin_cos();
        let total_mass = self.cart_mass + self.pole_mass;
        let pole_ml = self.pole_mass * self.half_length;
        let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_ml * theta_acc * cos / total_mass;

        let next = [
            x + self.dt * x_dot,
            x_dot + self.dt * x_acc,
            theta + self.dt * theta_dot,
            theta_dot + self.dt * theta_acc,
        ];
        let failed = next[0].abs() > self.x_limit || next[2].abs() > self.theta_limit;
        (next, failed)
    }
}

/// Axis-aligned box partition of the cart-pole state space.
///
/// Each axis has interior cut points; a coordinate falls in the bin given by
/// the number of cuts it is greater than or equal to. The absorbing state gets
/// the extra index `len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub cuts: [Vec<f64>; 4],
    /// Sampling range per axis used when building a box model.
    pub ranges: [(f64, f64); 4],
}

impl Default for BoxGrid {
    fn default() -> Self {
        let deg = 1.0_f64.to_radians();
        Self {
            cuts: [
                vec![-0.8, 0.8],
                vec![-0.5, 0.5],
                vec![-6.0 * deg, -deg, 0.0, deg, 6.0 * deg],
                vec![-50.0 * deg, 50.0 * deg],
            ],
            ranges: [(-2.4, 2.4), (-2.0, 2.0), (-12.0 * deg, 12.0 * deg), (-2.0, 2.0)],
        }
    }
}

impl BoxGrid {
    fn bins(&self, axis: usize) -> usize {
        self.cuts[axis].len() + 1
    }

    pub fn len(&self) -> usize {
        (0..4).map(|i| self.bins(i)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: &[f64; 4]) -> usize {
        let mut idx = 0;
        for (axis, x) in s.iter().enumerate() {
            let bin = self.cuts[axis].iter().filter(|c| *x >= **c).count();
            idx = idx * self.bins(axis) + bin;
        }
        idx
    }

    /// Bounds of one box, clipped to the sampling ranges.
    pub fn bounds(&self, index: usize) -> [(f64, f64); 4] {
        let mut rem = index;
        let mut out = [(0.0, 0.0); 4];
        for axis in (0..4).rev() {
            let bins = self.bins(axis);
            let bin = rem % bins;
            rem /= bins;
            let (lo_range, hi_range) = self.ranges[axis];
            let cuts = &self.cuts[axis];
            let lo = if bin == 0 { lo_range } else { cuts[bin - 1] };
            let hi = if bin == cuts.len() { hi_range } else { cuts[bin] };
            out[axis] = (lo, hi);
        }
        out
    }
}
