//! Domain types for decaying-chain transfer problems.
//!
//! The physical systems are N-level chains with nearest-neighbour couplings
//! where some intermediate levels decay. After the fixed variable rotation
//! `x1 = x1'`, `x2 = i x2'`, `x3 = -x3'`, `x4 = -i x4'`, `x5 = x5'` the
//! amplitudes stay real for real initial data and the dynamics reads
//! `dx/dt = M(t) x` with an antisymmetric coupling pattern and `-k` decay
//! terms on the diagonal. That rotation convention is fixed once here; no
//! alternate sign convention is accepted anywhere, which keeps emitted
//! artifacts stable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Standard control channel names.
pub mod channel {
    pub const OMEGA_P: &str = "omega_p";
    pub const OMEGA_I: &str = "omega_i";
    pub const OMEGA_S: &str = "omega_s";
    pub const U: &str = "u";
    pub const U1: &str = "u1";
    pub const U2: &str = "u2";
    /// Optional channel produced by time rescaling: multiplies every decay
    /// rate during propagation. Not counted as a coupling channel.
    pub const DECAY_SCALE: &str = "decay_scale";
}

/// An N-level chain with per-level decay rates and an amplitude bound on one
/// designated coupling channel.
///
/// Couplings are indexed `0..n_levels-1`, coupling `i` joining levels
/// `i` and `i+1`. For the three-level problem the bounded channel is the
/// Stokes coupling (index 1); for the four-level problem it is the
/// intermediate coupling (index 1). The remaining channels are treated as
/// unbounded by the analytic solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSystem {
    decay_rates: Vec<f64>,
    coupling_bound: f64,
    bounded_control_index: usize,
}

impl ChainSystem {
    pub fn new(
        decay_rates: Vec<f64>,
        coupling_bound: f64,
        bounded_control_index: usize,
    ) -> Result<Self> {
        let n = decay_rates.len();
        if n < 2 {
            return Err(Error::contract("chain needs at least 2 levels"));
        }
        if decay_rates.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(Error::contract("decay rates must be finite and non-negative"));
        }
        if decay_rates[0] != 0.0 || decay_rates[n - 1] != 0.0 {
            return Err(Error::contract(
                "transfer problems require zero decay on the first and last level",
            ));
        }
        if !(coupling_bound > 0.0) || !coupling_bound.is_finite() {
            return Err(Error::contract("coupling bound A must be positive and finite"));
        }
        if bounded_control_index >= n - 1 {
            return Err(Error::contract(format!(
                "bounded control index {bounded_control_index} out of range for {n} levels"
            )));
        }
        Ok(ChainSystem {
            decay_rates,
            coupling_bound,
            bounded_control_index,
        })
    }

    /// Lambda system: levels 1-2-3 with decay `k` on level 2, Stokes bounded.
    pub fn three_level(k: f64, a: f64) -> Result<Self> {
        Self::new(vec![0.0, k, 0.0], a, 1)
    }

    /// Four-level chain with decay `k` on levels 2 and 3, intermediate
    /// coupling bounded.
    pub fn four_level(k: f64, a: f64) -> Result<Self> {
        Self::new(vec![0.0, k, k, 0.0], a, 1)
    }

    /// Five-level chain with decay `k` on levels 2, 3 and 4.
    pub fn five_chain(k: f64, a: f64) -> Result<Self> {
        Self::new(vec![0.0, k, k, k, 0.0], a, 1)
    }

    pub fn n_levels(&self) -> usize {
        self.decay_rates.len()
    }

    pub fn n_couplings(&self) -> usize {
        self.decay_rates.len() - 1
    }

    pub fn decay_rates(&self) -> &[f64] {
        &self.decay_rates
    }

    pub fn coupling_bound(&self) -> f64 {
        self.coupling_bound
    }

    pub fn bounded_control_index(&self) -> usize {
        self.bounded_control_index
    }

    /// Largest decay rate in the chain (the paper's `k` for uniform chains).
    pub fn peak_decay(&self) -> f64 {
        self.decay_rates.iter().cloned().fold(0.0, f64::max)
    }

    /// Decay-to-coupling ratio `xi = k / A`.
    pub fn xi(&self) -> f64 {
        self.peak_decay() / self.coupling_bound
    }
}

/// Real amplitudes in the rotated representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealState(pub Vec<f64>);

impl RealState {
    pub fn ground(n_levels: usize) -> Self {
        let mut x = vec![0.0; n_levels];
        x[0] = 1.0;
        RealState(x)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.0.iter().map(|x| x * x).collect()
    }
}

/// Which polar layout a state uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarPartition {
    /// `r1 = sqrt(x1^2 + x2^2)`, `r2 = x3`, `tan(theta) = x1/x2`.
    ThreeLevel,
    /// `r1 = sqrt(x1^2 + x2^2)`, `r2 = sqrt(x3^2 + x4^2)`,
    /// `tan(theta1) = x1/x2`, `tan(theta2) = x4/x3`.
    FourLevel,
}

/// Polar form of a real chain state. Angles live in `[0, pi/2]`.
#[derive(Debug, Clone, PartialEq)]
pub enum PolarState {
    ThreeLevel { r1: f64, r2: f64, theta: f64 },
    FourLevel { r1: f64, r2: f64, theta1: f64, theta2: f64 },
}

const ANGLE_SLACK: f64 = 1e-12;

/// Angle of `(num, den)` in `[0, pi/2]`; 0 by convention when both vanish.
fn quadrant_angle(num: f64, den: f64, what: &str) -> Result<f64> {
    if num == 0.0 && den == 0.0 {
        return Ok(0.0);
    }
    let theta = num.atan2(den);
    if !(-ANGLE_SLACK..=std::f64::consts::FRAC_PI_2 + ANGLE_SLACK).contains(&theta) {
        return Err(Error::contract(format!(
            "{what}: amplitudes must be non-negative for the polar form (angle {theta:.3})"
        )));
    }
    Ok(theta.clamp(0.0, std::f64::consts::FRAC_PI_2))
}

/// Change to polar variables.
///
/// Amplitudes must be non-negative (the optimal flows keep them so); the
/// angle at `r1 = 0` is 0 by convention.
pub fn to_polar(x: &RealState, partition: PolarPartition) -> Result<PolarState> {
    match partition {
        PolarPartition::ThreeLevel => {
            if x.0.len() != 3 {
                return Err(Error::contract("three-level polar form needs 3 amplitudes"));
            }
            if x.0[2] < -ANGLE_SLACK {
                return Err(Error::contract("to_polar: x3 must be non-negative"));
            }
            Ok(PolarState::ThreeLevel {
                r1: x.0[0].hypot(x.0[1]),
                r2: x.0[2].max(0.0),
                theta: quadrant_angle(x.0[0], x.0[1], "to_polar(theta)")?,
            })
        }
        PolarPartition::FourLevel => {
            if x.0.len() != 4 {
                return Err(Error::contract("four-level polar form needs 4 amplitudes"));
            }
            Ok(PolarState::FourLevel {
                r1: x.0[0].hypot(x.0[1]),
                r2: x.0[2].hypot(x.0[3]),
                theta1: quadrant_angle(x.0[0], x.0[1], "to_polar(theta1)")?,
                theta2: quadrant_angle(x.0[3], x.0[2], "to_polar(theta2)")?,
            })
        }
    }
}

/// Inverse of [`to_polar`].
pub fn from_polar(p: &PolarState) -> RealState {
    match *p {
        PolarState::ThreeLevel { r1, r2, theta } => {
            RealState(vec![r1 * theta.sin(), r1 * theta.cos(), r2])
        }
        PolarState::FourLevel {
            r1,
            r2,
            theta1,
            theta2,
        } => RealState(vec![
            r1 * theta1.sin(),
            r1 * theta1.cos(),
            r2 * theta2.cos(),
            r2 * theta2.sin(),
        ]),
    }
}

/// Real dynamics matrix `M` with `dx/dt = M x` for the rotated chain.
///
/// `controls` holds one coupling value per channel, in chain order. The
/// pattern is `M[i][i+1] = -c_i`, `M[i+1][i] = +c_i`, `M[i][i] = -k_i`, so
/// `M + M^T = -2 diag(k)`.
pub fn build_real_generator(sys: &ChainSystem, controls: &[f64]) -> Result<Vec<Vec<f64>>> {
    if controls.len() != sys.n_couplings() {
        return Err(Error::contract(format!(
            "expected {} coupling values, got {}",
            sys.n_couplings(),
            controls.len()
        )));
    }
    let n = sys.n_levels();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = -sys.decay_rates[i];
    }
    for (i, &c) in controls.iter().enumerate() {
        m[i][i + 1] = -c;
        m[i + 1][i] = c;
    }
    Ok(m)
}

/// How sampled control values are read between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Value of the latest grid point at or before `t`.
    PiecewiseConstantLeft,
    /// Linear interpolation between neighbouring grid points.
    PiecewiseLinear,
}

/// One named control channel with optional amplitude bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

impl Channel {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Channel {
            name: name.into(),
            values,
            bound: None,
        }
    }

    pub fn bounded(name: impl Into<String>, values: Vec<f64>, bound: f64) -> Self {
        Channel {
            name: name.into(),
            values,
            bound: Some(bound),
        }
    }
}

/// Time-sampled control functions on a shared strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSchedule {
    grid: Vec<f64>,
    channels: Vec<Channel>,
    interpolation: Interpolation,
    /// Free-form numeric annotations (e.g. the Stokes phase `phi` carried by
    /// superposition pulses). Never consumed by the propagator.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, f64>,
}

const BOUND_SLACK: f64 = 1e-9;

impl ControlSchedule {
    pub fn new(
        grid: Vec<f64>,
        channels: Vec<Channel>,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::contract("schedule grid needs at least 2 points"));
        }
        if grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::contract("schedule grid must be finite"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("schedule grid must be strictly increasing"));
        }
        if channels.is_empty() {
            return Err(Error::contract("schedule needs at least one channel"));
        }
        for ch in &channels {
            if ch.values.len() != grid.len() {
                return Err(Error::contract(format!(
                    "channel '{}' has {} values for {} grid points",
                    ch.name,
                    ch.values.len(),
                    grid.len()
                )));
            }
            if ch.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!(
                    "channel '{}' has non-finite values",
                    ch.name
                )));
            }
            if let Some(bound) = ch.bound {
                if let Some(v) = ch
                    .values
                    .iter()
                    .find(|v| v.abs() > bound * (1.0 + BOUND_SLACK) + BOUND_SLACK)
                {
                    return Err(Error::contract(format!(
                        "channel '{}' exceeds its bound {bound}: value {v}",
                        ch.name
                    )));
                }
            }
        }
        Ok(ControlSchedule {
            grid,
            channels,
            interpolation,
            metadata: BTreeMap::new(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn start_time(&self) -> f64 {
        self.grid[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    /// Index of the grid segment containing `t` (clamped at the ends).
    fn segment_of(&self, t: f64) -> usize {
        match self
            .grid
            .binary_search_by(|g| g.partial_cmp(&t).expect("finite grid"))
        {
            Ok(i) => i.min(self.grid.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.grid.len() - 2),
        }
    }

    /// Value of channel `idx` at time `t` (clamped to the grid span).
    pub fn eval(&self, idx: usize, t: f64) -> f64 {
        let seg = self.segment_of(t);
        let vals = &self.channels[idx].values;
        match self.interpolation {
            Interpolation::PiecewiseConstantLeft => {
                if t >= *self.grid.last().unwrap() {
                    *vals.last().unwrap()
                } else {
                    vals[seg]
                }
            }
            Interpolation::PiecewiseLinear => {
                let (t0, t1) = (self.grid[seg], self.grid[seg + 1]);
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                vals[seg] + w * (vals[seg + 1] - vals[seg])
            }
        }
    }

    /// All channel values at `t`, in declared channel order.
    pub fn values_at(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels.len());
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.eval(i, t);
        }
    }

    /// Slope of channel `idx` at `t` implied by the interpolation rule.
    ///
    /// Piecewise-constant channels have zero slope; linear channels use their
    /// segment slope (left segment at interior nodes).
    pub fn slope(&self, idx: usize, t: f64) -> f64 {
        match self.interpolation {
            Interpolation::PiecewiseConstantLeft => 0.0,
            Interpolation::PiecewiseLinear => {
                let mut seg = self.segment_of(t);
                if t > self.grid[0] && (t - self.grid[seg]).abs() == 0.0 && seg > 0 {
                    seg -= 1;
                }
                let vals = &self.channels[idx].values;
                (vals[seg + 1] - vals[seg]) / (self.grid[seg + 1] - self.grid[seg])
            }
        }
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: f64) -> Self {
        self.metadata.insert(key.into(), value);
        self
    }
}
