//! Scenario description: surveillance region, targets, sensor nodes, network
//! graph, and filter settings. Scenarios are TOML documents whose field
//! names carry their units.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::cphd::{wrap_angle, BirthModel, CphdConfig, MotionModel, SensorModel};
use crate::error::{Error, Result};
use crate::fusion::{rotation2, EdgeRegistration, NetworkGraph};
use crate::gm::{Gaussian, MergePrune};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    /// Sensor position in the global frame.
    pub position_m: [f64; 2],
    /// Rotation of the local frame with respect to the global one.
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// First step at which the target exists.
    pub birth_step: usize,
    /// First step at which the target no longer exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub death_step: Option<usize>,
    /// Global state `[xi, xi_dot, eta, eta_dot]` at the birth step.
    pub initial_state_m_mps: [f64; 4],
}

/// True registration of one directed edge, stated explicitly so that it can
/// be checked against the node placements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationSpec {
    /// Receiving node `i`.
    pub node: usize,
    /// Neighbor `j` whose frame is mapped into node `i`'s.
    pub neighbor: usize,
    pub drift_m: [f64; 2],
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub detection_probability: f64,
    /// Mean clutter count per scan, uniform over the region.
    pub clutter_rate: f64,
    pub range_sigma_m: f64,
    pub bearing_sigma_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub survival_probability: f64,
    pub process_sigma_mps2: f64,
    pub n_max: usize,
    /// Expected births per step, split evenly across the birth zones.
    pub birth_mean: f64,
    pub birth_position_sigma_m: f64,
    pub birth_velocity_sigma_mps: f64,
    /// Global birth-zone centres `[xi, eta]`.
    pub birth_zones_m: Vec<[f64; 2]>,
    #[serde(default)]
    pub merge: MergePrune,
    /// Squared-Mahalanobis innovation gate; 0 disables gating.
    #[serde(default = "default_gate")]
    pub gate: f64,
}

fn default_gate() -> f64 {
    25.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSpec {
    pub iterations: usize,
    /// First step at which consensus runs.
    pub start_step: usize,
    /// Consensus weight matrix; Metropolis weights on `edges` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationSettings {
    /// Orientation assumed known (drift-only estimation).
    #[serde(default)]
    pub known_orientation: bool,
    /// Components kept per node when forming the reward factor.
    pub component_cap: usize,
    pub drift_gate_m: f64,
    pub angle_gate_deg: f64,
    pub max_hypotheses: usize,
    /// Registration runs only when every node of the neighborhood estimates
    /// at least this many targets.
    pub min_cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub steps: usize,
    pub step_s: f64,
    /// The region is `[0, width] x [0, height]` in the global frame.
    pub region_m: [f64; 2],
    /// Seed for the target trajectories, shared across Monte Carlo runs.
    pub trajectory_seed: u64,
    pub truth_sigma_mps2: f64,
    pub nodes: Vec<NodeSpec>,
    /// Undirected communication links.
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub registration_truth: Vec<RegistrationSpec>,
    pub targets: Vec<TargetSpec>,
    pub sensor: SensorSpec,
    pub filter: FilterSpec,
    pub consensus: ConsensusSpec,
    pub registration: RegistrationSettings,
}

/// The two reference networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Tree,
    Cycles,
}

const REF_NODES: [([f64; 2], f64); 6] = [
    ([2000.0, 3000.0], 0.0),
    ([4000.0, 2500.0], 40.0),
    ([6000.0, 3000.0], -60.0),
    ([3000.0, 5500.0], 120.0),
    ([5000.0, 5500.0], -135.0),
    ([4000.0, 7500.0], 75.0),
];

const REF_TARGETS: [(usize, Option<usize>, [f64; 4]); 6] = [
    (1, Some(161), [1500.0, 8.0, 1500.0, 6.0]),
    (1, None, [6500.0, -6.0, 1500.0, 9.0]),
    (1, Some(201), [1500.0, 9.0, 6500.0, -5.0]),
    (1, None, [6500.0, -8.0, 6500.0, -4.0]),
    (101, None, [4000.0, 2.0, 1000.0, 10.0]),
    (121, None, [1000.0, 10.0, 4000.0, 1.0]),
];

impl Scenario {
    /// Built-in reference scenario for the given topology.
    pub fn reference(topology: Topology) -> Self {
        let (name, edges): (&str, Vec<[usize; 2]>) = match topology {
            Topology::Tree => ("ref_tree", vec![[0, 1], [1, 2], [1, 3], [3, 4], [3, 5]]),
            Topology::Cycles => (
                "ref_cycles",
                vec![[0, 1], [1, 2], [2, 4], [4, 5], [5, 3], [3, 0], [1, 4]],
            ),
        };
        let nodes: Vec<NodeSpec> = REF_NODES
            .iter()
            .map(|&(p, a)| NodeSpec {
                position_m: p,
                azimuth_deg: a,
            })
            .collect();
        let mut s = Scenario {
            name: name.into(),
            steps: 300,
            step_s: 1.0,
            region_m: [8000.0, 8000.0],
            trajectory_seed: 2017,
            truth_sigma_mps2: 0.05,
            nodes,
            edges,
            registration_truth: Vec::new(),
            targets: REF_TARGETS
                .iter()
                .map(|&(b, d, x)| TargetSpec {
                    birth_step: b,
                    death_step: d,
                    initial_state_m_mps: x,
                })
                .collect(),
            sensor: SensorSpec {
                detection_probability: 0.98,
                clutter_rate: 20.0,
                range_sigma_m: 2.0,
                bearing_sigma_deg: 0.1,
            },
            filter: FilterSpec {
                survival_probability: 0.9,
                process_sigma_mps2: 3.0,
                n_max: 10,
                birth_mean: 0.06,
                birth_position_sigma_m: 100.0,
                birth_velocity_sigma_mps: 10.0,
                birth_zones_m: REF_TARGETS.iter().map(|t| [t.2[0], t.2[2]]).collect(),
                merge: MergePrune::default(),
                gate: 25.0,
            },
            consensus: ConsensusSpec {
                iterations: 3,
                start_step: 150,
                weights: None,
            },
            registration: RegistrationSettings {
                known_orientation: false,
                component_cap: 8,
                drift_gate_m: 50.0,
                angle_gate_deg: 5.0,
                max_hypotheses: 20,
                min_cardinality: 3,
            },
        };
        s.registration_truth = s.derived_registrations();
        let g = s.graph().expect("reference graph is valid");
        s.consensus.weights = Some((0..g.len()).map(|i| (0..g.len()).map(|j| g.weight(i, j)).collect()).collect());
        s
    }

    /// Looks up a built-in scenario by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "ref_tree" => Some(Self::reference(Topology::Tree)),
            "ref_cycles" => Some(Self::reference(Topology::Cycles)),
            _ => None,
        }
    }

    /// Loads a built-in name or a TOML file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(s) = Self::builtin(spec) {
            return Ok(s);
        }
        Self::from_path(Path::new(spec))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn region_area(&self) -> f64 {
        self.region_m[0] * self.region_m[1]
    }

    /// Registration of `neighbor`'s frame into `node`'s frame implied by the
    /// placements: `gamma = phi_j - phi_i`, `drift = R(-phi_i)(p_j - p_i)`.
    pub fn true_registration(&self, node: usize, neighbor: usize) -> EdgeRegistration {
        let (pi, pj) = (&self.nodes[node], &self.nodes[neighbor]);
        let phi_i = pi.azimuth_deg.to_radians();
        let phi_j = pj.azimuth_deg.to_radians();
        let d = Vector2::new(pj.position_m[0] - pi.position_m[0], pj.position_m[1] - pi.position_m[1]);
        let drift = rotation2(-phi_i) * d;
        EdgeRegistration::new(drift.x, drift.y, phi_j - phi_i)
    }

    /// Both directions of every edge, from the placements.
    pub fn derived_registrations(&self) -> Vec<RegistrationSpec> {
        let mut out = Vec::new();
        for e in &self.edges {
            for (i, j) in [(e[0], e[1]), (e[1], e[0])] {
                let r = self.true_registration(i, j);
                out.push(RegistrationSpec {
                    node: i,
                    neighbor: j,
                    drift_m: [r.drift.x, r.drift.y],
                    angle_deg: r.angle.to_degrees(),
                });
            }
        }
        out
    }

    /// The consensus graph: explicit weights if given, Metropolis otherwise.
    pub fn graph(&self) -> Result<NetworkGraph> {
        match &self.consensus.weights {
            Some(w) => {
                let rows = w
                    .iter()
                    .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)).collect())
                    .collect();
                NetworkGraph::from_weights(rows)
            }
            None => {
                let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
                NetworkGraph::metropolis(self.nodes.len(), &edges)
            }
        }
    }

    /// Global position `[xi, eta]` mapped into `node`'s frame.
    pub fn to_local_position(&self, node: usize, p: &Vector2<f64>) -> Vector2<f64> {
        let n = &self.nodes[node];
        let o = Vector2::new(n.position_m[0], n.position_m[1]);
        rotation2(-n.azimuth_deg.to_radians()) * (p - o)
    }

    /// Global state mapped into `node`'s frame.
    pub fn to_local_state(&self, node: usize, x: &DVector<f64>) -> DVector<f64> {
        let phi = self.nodes[node].azimuth_deg.to_radians();
        let r = rotation2(-phi);
        let p = self.to_local_position(node, &Vector2::new(x[0], x[2]));
        let v = r * Vector2::new(x[1], x[3]);
        DVector::from_vec(vec![p.x, v.x, p.y, v.y])
    }

    pub fn motion_model(&self, node: usize) -> Result<MotionModel> {
        let f = &self.filter;
        let mut zones = Vec::with_capacity(f.birth_zones_m.len());
        for z in &f.birth_zones_m {
            let p = self.to_local_position(node, &Vector2::new(z[0], z[1]));
            let (sp, sv) = (f.birth_position_sigma_m.powi(2), f.birth_velocity_sigma_mps.powi(2));
            zones.push(Gaussian::new(
                DVector::from_vec(vec![p.x, 0.0, p.y, 0.0]),
                DMatrix::from_diagonal(&DVector::from_vec(vec![sp, sv, sp, sv])),
            )?);
        }
        let birth = if zones.is_empty() || f.birth_mean <= 0.0 {
            BirthModel::none()
        } else {
            BirthModel::zones(zones, f.birth_mean, f.n_max)
        };
        Ok(MotionModel::white_noise_acceleration(
            self.step_s,
            f.process_sigma_mps2,
            f.survival_probability,
            birth,
        ))
    }

    pub fn sensor_model(&self) -> SensorModel {
        let s = &self.sensor;
        SensorModel::range_bearing(
            s.range_sigma_m,
            s.bearing_sigma_deg.to_radians(),
            s.detection_probability,
            s.clutter_rate,
            self.region_area(),
        )
    }

    pub fn cphd_config(&self) -> CphdConfig {
        CphdConfig {
            merge: self.filter.merge,
            gate: (self.filter.gate > 0.0).then_some(self.filter.gate),
        }
    }

    /// Every violated invariant, one message per violation.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.nodes.len();
        if n < 2 {
            v.push(format!("network has {n} nodes, at least 2 needed"));
        }
        if self.steps == 0 {
            v.push("steps must be positive".into());
        }
        if !(self.step_s > 0.0) {
            v.push(format!("step_s must be positive, got {}", self.step_s));
        }
        if !(self.region_m[0] > 0.0 && self.region_m[1] > 0.0) {
            v.push(format!("region_m must be positive, got {:?}", self.region_m));
        }
        if !(self.truth_sigma_mps2 >= 0.0) {
            v.push("truth_sigma_mps2 must be non-negative".into());
        }
        let inside = |p: [f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= self.region_m[0] && p[1] <= self.region_m[1];
        for (i, node) in self.nodes.iter().enumerate() {
            if !inside(node.position_m) {
                v.push(format!("node {i}: position {:?} outside the region", node.position_m));
            }
            if !node.azimuth_deg.is_finite() {
                v.push(format!("node {i}: azimuth is not finite"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.edges {
            if e[0] >= n || e[1] >= n {
                v.push(format!("edge ({}, {}): node index out of range", e[0], e[1]));
            } else if e[0] == e[1] {
                v.push(format!("edge ({}, {}): self loop", e[0], e[1]));
            } else if !seen.insert((e[0].min(e[1]), e[0].max(e[1]))) {
                v.push(format!("edge ({}, {}): listed twice", e[0], e[1]));
            }
        }
        if n >= 2 && v.iter().all(|m| !m.starts_with("edge")) && !connected(n, &self.edges) {
            v.push("network graph is not connected".into());
        }
        self.validate_registrations(&seen, &mut v);
        self.validate_weights(&seen, &mut v);
        for (k, t) in self.targets.iter().enumerate() {
            let x = t.initial_state_m_mps;
            if t.birth_step == 0 || t.birth_step > self.steps {
                v.push(format!("target {k}: birth step {} outside 1..={}", t.birth_step, self.steps));
            }
            if let Some(d) = t.death_step {
                if d <= t.birth_step {
                    v.push(format!("target {k}: death step {d} not after birth step {}", t.birth_step));
                }
            }
            if !inside([x[0], x[2]]) {
                v.push(format!("target {k}: initial position outside the region"));
            } else {
                let last = t.death_step.map_or(self.steps, |d| d - 1).min(self.steps);
                let dt = (last.saturating_sub(t.birth_step)) as f64 * self.step_s;
                if !inside([x[0] + x[1] * dt, x[2] + x[3] * dt]) {
                    v.push(format!("target {k}: constant-velocity path leaves the region"));
                }
            }
        }
        let s = &self.sensor;
        if !(s.detection_probability > 0.0 && s.detection_probability <= 1.0) {
            v.push(format!("sensor: detection probability {} outside (0, 1]", s.detection_probability));
        }
        if !(s.clutter_rate >= 0.0) {
            v.push("sensor: clutter rate must be non-negative".into());
        }
        if !(s.range_sigma_m > 0.0 && s.bearing_sigma_deg > 0.0) {
            v.push("sensor: noise deviations must be positive".into());
        }
        let f = &self.filter;
        if !(f.survival_probability > 0.0 && f.survival_probability <= 1.0) {
            v.push(format!("filter: survival probability {} outside (0, 1]", f.survival_probability));
        }
        if f.n_max == 0 {
            v.push("filter: n_max must be positive".into());
        }
        if !(f.process_sigma_mps2 > 0.0 && f.birth_position_sigma_m > 0.0 && f.birth_velocity_sigma_mps > 0.0) {
            v.push("filter: deviations must be positive".into());
        }
        if !(f.birth_mean >= 0.0) {
            v.push("filter: birth mean must be non-negative".into());
        }
        if self.consensus.iterations == 0 {
            v.push("consensus: iterations must be positive".into());
        }
        let r = &self.registration;
        if r.component_cap < 3 {
            v.push("registration: component_cap must be at least 3".into());
        }
        if !(r.drift_gate_m > 0.0 && r.angle_gate_deg > 0.0) || r.max_hypotheses == 0 {
            v.push("registration: gates and hypothesis cap must be positive".into());
        }
        v
    }

    fn validate_registrations(&self, edges: &std::collections::BTreeSet<(usize, usize)>, v: &mut Vec<String>) {
        let n = self.nodes.len();
        let find = |i: usize, j: usize| self.registration_truth.iter().find(|r| r.node == i && r.neighbor == j);
        for r in &self.registration_truth {
            let (i, j) = (r.node, r.neighbor);
            if i >= n || j >= n {
                v.push(format!("registration ({i}, {j}): node index out of range"));
                continue;
            }
            if i == j {
                if r.drift_m != [0.0, 0.0] || r.angle_deg != 0.0 {
                    v.push(format!("registration ({i}, {i}): self registration must be zero"));
                }
                continue;
            }
            if !edges.contains(&(i.min(j), i.max(j))) {
                v.push(format!("registration ({i}, {j}): not an edge of the graph"));
            }
            let truth = self.true_registration(i, j);
            let da = wrap_angle(r.angle_deg.to_radians() - truth.angle).abs();
            let dd = (Vector2::new(r.drift_m[0], r.drift_m[1]) - truth.drift).norm();
            if da > 1e-9 || dd > 1e-6 {
                v.push(format!(
                    "registration ({i}, {j}): does not match the node placements (drift off by {dd:.3} m, angle by {:.6} deg)",
                    da.to_degrees()
                ));
            }
            if let (Some(back), true) = (find(j, i), i < j) {
                if wrap_angle((r.angle_deg + back.angle_deg).to_radians()).abs() > 1e-9 {
                    v.push(format!(
                        "registration ({i}, {j}) and ({j}, {i}): angles {} and {} are not opposite",
                        r.angle_deg, back.angle_deg
                    ));
                }
                let g = r.angle_deg.to_radians();
                let expected = -(rotation2(-g) * Vector2::new(r.drift_m[0], r.drift_m[1]));
                if (expected - Vector2::new(back.drift_m[0], back.drift_m[1])).norm() > 1e-6 {
                    v.push(format!("registration ({i}, {j}) and ({j}, {i}): drifts are not mutually inverse"));
                }
            }
        }
    }

    fn validate_weights(&self, edges: &std::collections::BTreeSet<(usize, usize)>, v: &mut Vec<String>) {
        let Some(w) = &self.consensus.weights else {
            return;
        };
        let n = self.nodes.len();
        if w.len() != n {
            v.push(format!("consensus: weight matrix has {} rows for {n} nodes", w.len()));
            return;
        }
        for (i, row) in w.iter().enumerate() {
            if row.len() != n {
                v.push(format!("node {i}: weight row has {} entries for {n} nodes", row.len()));
                continue;
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                v.push(format!("node {i}: consensus weights sum to {sum}, not 1"));
            }
            for (j, &x) in row.iter().enumerate() {
                if !(x >= 0.0) {
                    v.push(format!("node {i}: weight to node {j} is negative"));
                }
                if i != j && x > 0.0 && !edges.contains(&(i.min(j), i.max(j))) {
                    v.push(format!("node {i}: weight to node {j} without a link"));
                }
            }
            if !(row[i] > 0.0) {
                v.push(format!("node {i}: self weight must be positive"));
            }
        }
    }
}

fn connected(n: usize, edges: &[[usize; 2]]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(a) = stack.pop() {
        for e in edges {
            for (x, y) in [(e[0], e[1]), (e[1], e[0])] {
                if x == a && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Parses and validates; an invalid scenario becomes [`Error::Scenario`]
/// with one violation per line.
pub fn load_validated(spec: &str) -> Result<Scenario> {
    let s = Scenario::load(spec)?;
    let violations = s.validate();
    if violations.is_empty() {
        Ok(s)
    } else {
        Err(Error::Scenario(violations.join("\n")))
    }
}
