//! Monte Carlo simulation of a sensor network tracking targets while
//! registering its sensors.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cphd::{
    cphd_correct, cphd_predict, extract_states, range_bearing, wrap_angle, CphdConfig, IidClusterDensity,
    MotionModel, SensorModel,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse_neighborhood, EdgeRegistration, FusionConfig, NetworkGraph, RegistrationParams};
use crate::gm::merge_prune;
use crate::metrics::{ospa, registration_errors};
use crate::registration::{
    build_irf, cardinality_coefficients, instantaneous_estimate_with, EstimateConfig, HypothesisConfig,
    HypothesisSet, TotalCostConfig, TotalCostState,
};
use crate::scenario::Scenario;

/// OSPA cut-off in metres.
pub const OSPA_CUTOFF: f64 = 50.0;
/// OSPA order.
pub const OSPA_ORDER: f64 = 2.0;

/// Processing chain run by every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Joint registration and consensus tracking.
    JsrDmt,
    /// Consensus tracking with the true registration.
    CcphdPk,
    /// Local filtering only.
    LocalOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::JsrDmt => "jsr-dmt",
            Mode::CcphdPk => "ccphd-pk",
            Mode::LocalOnly => "local-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub mode: Mode,
    pub seed: u64,
    /// Overrides of the scenario values.
    pub consensus_iterations: Option<usize>,
    pub consensus_start: Option<usize>,
    pub n_max: Option<usize>,
    /// In joint mode, skip registration and fuse with the true parameters.
    pub registration: bool,
}

impl RunOptions {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            consensus_iterations: None,
            consensus_start: None,
            n_max: None,
            registration: true,
        }
    }
}

// ============================================================================
// Seeds
// ============================================================================

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based seed: the master seed is folded with each coordinate in
/// turn through SplitMix64.
pub fn stream_seed(master: u64, run: u64, node: u64, step: u64, stream: u64) -> u64 {
    [run, node, step, stream]
        .iter()
        .fold(splitmix(master), |acc, &x| splitmix(acc ^ splitmix(x)))
}

pub fn stream_rng(master: u64, run: u64, node: u64, step: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, run, node, step, stream))
}

// ============================================================================
// Ground truth
// ============================================================================

/// Target states per step in the global frame; `states[t - 1]` holds
/// `(target index, state)` pairs for step `t`.
#[derive(Debug, Clone)]
pub struct Truth {
    pub states: Vec<Vec<(usize, DVector<f64>)>>,
}

impl Truth {
    /// Targets alive at step `t` (1-based); empty outside the horizon.
    pub fn at(&self, t: usize) -> &[(usize, DVector<f64>)] {
        if t == 0 || t > self.states.len() {
            &[]
        } else {
            &self.states[t - 1]
        }
    }

    pub fn cardinality(&self, t: usize) -> usize {
        self.at(t).len()
    }
}

fn cv_matrices(dt: f64, sigma: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = MotionModel::white_noise_acceleration(dt, sigma, 1.0, crate::cphd::BirthModel::none());
    (m.f, m.q)
}

/// Draws the target trajectories. A path that leaves the region is redrawn
/// from the next sub-seed; after 100 failures the noise-free path is used.
pub fn generate_truth(scenario: &Scenario) -> Truth {
    let (f, q) = cv_matrices(scenario.step_s, scenario.truth_sigma_mps2);
    let chol = q.clone().cholesky();
    let inside = |x: &DVector<f64>| {
        x[0] >= 0.0 && x[2] >= 0.0 && x[0] <= scenario.region_m[0] && x[2] <= scenario.region_m[1]
    };
    let mut states = vec![Vec::new(); scenario.steps];
    for (k, target) in scenario.targets.iter().enumerate() {
        let last = target.death_step.map_or(scenario.steps, |d| (d - 1).min(scenario.steps));
        if target.birth_step == 0 || target.birth_step > last {
            continue;
        }
        let mut path = Vec::new();
        for attempt in 0..=100u64 {
            let mut rng = stream_rng(scenario.trajectory_seed, k as u64, attempt, 0, 0);
            let mut x = DVector::from_column_slice(&target.initial_state_m_mps);
            path.clear();
            path.push(x.clone());
            let noisy = attempt < 100 && scenario.truth_sigma_mps2 > 0.0;
            for _ in target.birth_step..last {
                x = &f * &x;
                if let (true, Some(c)) = (noisy, chol.as_ref()) {
                    let w = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                    x += c.l() * w;
                }
                path.push(x.clone());
            }
            if path.iter().all(inside) || attempt == 100 {
                break;
            }
        }
        for (offset, x) in path.into_iter().enumerate() {
            states[target.birth_step - 1 + offset].push((k, x));
        }
    }
    Truth { states }
}

/// Ground-truth states at step `t` (1-based).
pub fn propagate_targets(scenario: &Scenario, t: usize) -> Vec<DVector<f64>> {
    generate_truth(scenario).at(t).iter().map(|(_, x)| x.clone()).collect()
}

/// One scan of `node`: detections of the global `truth` states followed by
/// clutter drawn uniformly over the region.
pub fn generate_measurements(
    scenario: &Scenario,
    sensor: &SensorModel,
    truth: &[DVector<f64>],
    node: usize,
    rng: &mut impl Rng,
) -> Vec<DVector<f64>> {
    let sr = scenario.sensor.range_sigma_m;
    let sb = scenario.sensor.bearing_sigma_deg.to_radians();
    let mut out = Vec::new();
    for x in truth {
        if rng.random::<f64>() >= sensor.detection {
            continue;
        }
        let local = scenario.to_local_state(node, x);
        let z = range_bearing(&local);
        let dr: f64 = rng.sample(rand_distr::StandardNormal);
        let db: f64 = rng.sample(rand_distr::StandardNormal);
        out.push(DVector::from_vec(vec![z[0] + sr * dr, wrap_angle(z[1] + sb * db)]));
    }
    if sensor.clutter_rate > 0.0 {
        let count = Poisson::new(sensor.clutter_rate).map_or(0.0, |p| p.sample(rng)) as usize;
        for _ in 0..count {
            let p = Vector2::new(
                rng.random::<f64>() * scenario.region_m[0],
                rng.random::<f64>() * scenario.region_m[1],
            );
            let local = scenario.to_local_position(node, &p);
            let z = range_bearing(&DVector::from_vec(vec![local.x, 0.0, local.y, 0.0]));
            out.push(z);
        }
    }
    out
}

// ============================================================================
// Network
// ============================================================================

/// What registration did at one node in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegistrationStatus {
    Updated,
    /// Too few estimated targets in the neighborhood.
    Waiting,
    Failed,
    Off,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub density: IidClusterDensity,
    /// Current registration estimate per neighbor.
    pub estimates: RegistrationParams,
    pub hypotheses: HypothesisSet,
    pub total_cost: TotalCostState,
    pub reward: f64,
    pub status: RegistrationStatus,
}

/// Per-step summary returned by [`Network::step`].
#[derive(Debug, Clone)]
pub struct StepReport {
    pub consensus_iterations: usize,
    /// Densities after local correction, before any fusion.
    pub local: Vec<IidClusterDensity>,
}

/// Every node of the network with its filter models.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: NetworkGraph,
    pub nodes: Vec<NodeState>,
    pub neighbors: Vec<Vec<usize>>,
    motion: Vec<MotionModel>,
    sensor: SensorModel,
    cphd: CphdConfig,
    fusion: FusionConfig,
    truth_params: Vec<RegistrationParams>,
    mode: Mode,
    registration_on: bool,
    known_orientation: bool,
    consensus_iterations: usize,
    consensus_start: usize,
    component_cap: usize,
    min_cardinality: usize,
    hypothesis_cfg: HypothesisConfig,
    estimate_cfg: EstimateConfig,
    total_cost_cfg: TotalCostConfig,
}

impl Network {
    pub fn new(scenario: &Scenario, opts: &RunOptions) -> Result<Self> {
        let graph = scenario.graph()?;
        let n = scenario.nodes.len();
        let n_max = opts.n_max.unwrap_or(scenario.filter.n_max);
        let mut scenario = scenario.clone();
        scenario.filter.n_max = n_max;
        let motion = (0..n).map(|i| scenario.motion_model(i)).collect::<Result<Vec<_>>>()?;
        let neighbors: Vec<Vec<usize>> = (0..n).map(|i| graph.neighbors(i).filter(|&j| j != i).collect()).collect();
        let truth_params = (0..n)
            .map(|i| neighbors[i].iter().map(|&j| (j, scenario.true_registration(i, j))).collect())
            .collect();
        let cphd = scenario.cphd_config();
        let r = &scenario.registration;
        let nodes = (0..n)
            .map(|i| NodeState {
                density: IidClusterDensity::empty(n_max),
                estimates: neighbors[i].iter().map(|&j| (j, EdgeRegistration::identity())).collect(),
                hypotheses: HypothesisSet::new(),
                total_cost: TotalCostState::new(),
                reward: 0.0,
                status: RegistrationStatus::Off,
            })
            .collect();
        Ok(Self {
            graph,
            nodes,
            neighbors,
            motion,
            sensor: scenario.sensor_model(),
            fusion: FusionConfig {
                merge: cphd.merge,
                gate: cphd.gate,
            },
            cphd,
            truth_params,
            mode: opts.mode,
            registration_on: opts.mode == Mode::JsrDmt && opts.registration,
            known_orientation: r.known_orientation,
            consensus_iterations: opts.consensus_iterations.unwrap_or(scenario.consensus.iterations),
            consensus_start: opts.consensus_start.unwrap_or(scenario.consensus.start_step),
            component_cap: r.component_cap,
            min_cardinality: if r.known_orientation { 1 } else { r.min_cardinality },
            hypothesis_cfg: HypothesisConfig {
                drift_gate: r.drift_gate_m,
                angle_gate: r.angle_gate_deg.to_radians(),
                max_hypotheses: r.max_hypotheses,
            },
            estimate_cfg: EstimateConfig::default(),
            total_cost_cfg: TotalCostConfig::default(),
        })
    }

    /// Registrations used for fusion at node `i`.
    pub fn fusion_params(&self, i: usize) -> &RegistrationParams {
        if self.registration_on {
            &self.nodes[i].estimates
        } else {
            &self.truth_params[i]
        }
    }

    pub fn true_params(&self, i: usize) -> &RegistrationParams {
        &self.truth_params[i]
    }

    /// One time step: local filtering, registration on the local posteriors,
    /// then consensus when active.
    pub fn step(&mut self, t: usize, scans: &[Vec<DVector<f64>>]) -> Result<StepReport> {
        let n = self.nodes.len();
        if scans.len() != n {
            return Err(Error::InvalidArgument(format!("{} scans for {n} nodes", scans.len())));
        }
        let local: Vec<IidClusterDensity> = (0..n)
            .into_par_iter()
            .map(|i| {
                let pred = cphd_predict(&self.nodes[i].density, &self.motion[i])?;
                cphd_correct(&pred, &scans[i], &self.sensor, &self.cphd)
            })
            .collect::<Result<_>>()?;
        if self.registration_on {
            let updates: Vec<_> = (0..n).into_par_iter().map(|i| self.register(i, &local)).collect();
            for (node, u) in self.nodes.iter_mut().zip(updates) {
                *node = u;
            }
        }
        let mut current = local.clone();
        let mut rounds = 0;
        if self.mode != Mode::LocalOnly && t >= self.consensus_start {
            for _ in 0..self.consensus_iterations {
                current = (0..n)
                    .into_par_iter()
                    .map(|i| fuse_neighborhood(&current, &self.graph, self.fusion_params(i), i, &self.fusion))
                    .collect::<Result<_>>()?;
                rounds += 1;
            }
        }
        for (node, d) in self.nodes.iter_mut().zip(current) {
            node.density = d;
        }
        Ok(StepReport {
            consensus_iterations: rounds,
            local,
        })
    }

    /// Registration at node `i`; failures keep the previous estimates.
    fn register(&self, i: usize, local: &[IidClusterDensity]) -> NodeState {
        let mut state = self.nodes[i].clone();
        let nbrs = &self.neighbors[i];
        if nbrs.is_empty() {
            state.status = RegistrationStatus::Off;
            return state;
        }
        let ready = std::iter::once(i)
            .chain(nbrs.iter().copied())
            .all(|k| local[k].map_cardinality() >= self.min_cardinality);
        if !ready {
            state.status = RegistrationStatus::Waiting;
            state.reward = 0.0;
            return state;
        }
        match self.register_inner(i, local, &mut state) {
            Ok(()) => state.status = RegistrationStatus::Updated,
            Err(_) => {
                state = self.nodes[i].clone();
                state.status = RegistrationStatus::Failed;
                state.reward = 0.0;
            }
        }
        state
    }

    fn register_inner(&self, i: usize, local: &[IidClusterDensity], state: &mut NodeState) -> Result<()> {
        let nbrs = &self.neighbors[i];
        let mut dens = vec![local[i].clone()];
        let mut weights = vec![self.graph.weight(i, i)];
        for &j in nbrs {
            dens.push(local[j].clone());
            weights.push(self.graph.weight(i, j));
        }
        let irf = build_irf(&dens, &weights, self.component_cap)?;
        let current: Vec<EdgeRegistration> = nbrs.iter().map(|j| state.estimates[j]).collect();
        if self.known_orientation {
            let gammas: Vec<f64> = nbrs.iter().map(|j| self.truth_params[i][j].angle).collect();
            let w = merge_prune(&irf.drift_mixture(&gammas)?, &self.total_cost_cfg.merge);
            let coeffs = cardinality_coefficients(&dens, &weights)?;
            state.total_cost = state.total_cost.update(&coeffs, &w, &self.total_cost_cfg)?;
            let prev: Vec<Vector2<f64>> = current.iter().map(|r| r.drift).collect();
            if let Some(drifts) = state.total_cost.estimate(&prev, &self.total_cost_cfg)? {
                for ((j, d), g) in nbrs.iter().zip(drifts).zip(gammas) {
                    state.estimates.insert(*j, EdgeRegistration { drift: d, angle: g });
                }
            }
            state.reward = irf.eval(
                &nbrs
                    .iter()
                    .map(|j| state.estimates[j])
                    .collect::<Vec<_>>(),
            )?;
            return Ok(());
        }
        let mut warm = vec![current];
        let mut ranked: Vec<_> = state.hypotheses.items.iter().collect();
        ranked.sort_by(|a, b| b.kappa.total_cmp(&a.kappa));
        warm.extend(ranked.into_iter().take(3).map(|h| h.regs.clone()));
        let est = instantaneous_estimate_with(&irf, &warm, &self.estimate_cfg)?;
        state.hypotheses.update(&est.regs, est.reward, &self.hypothesis_cfg);
        if let Some(best) = state.hypotheses.best() {
            for (j, r) in nbrs.iter().zip(&best.regs) {
                state.estimates.insert(*j, *r);
            }
        }
        state.reward = est.reward;
        Ok(())
    }
}

// ============================================================================
// Runs
// ============================================================================

/// Tracking performance of one node at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub run: usize,
    pub step: usize,
    pub node: usize,
    pub ospa_m: f64,
    pub estimated_cardinality: f64,
    pub extracted_targets: usize,
    pub true_cardinality: usize,
    pub consensus_iterations: usize,
}

/// Registration error of one directed edge at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub run: usize,
    pub step: usize,
    pub node: usize,
    pub neighbor: usize,
    pub drift_error_m: f64,
    /// Wrapped `truth - estimate`.
    pub angle_error_rad: f64,
    pub drift_x_m: f64,
    pub drift_y_m: f64,
    pub angle_rad: f64,
    pub reward: f64,
    pub hypotheses: usize,
    pub status: RegistrationStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub tracks: Vec<TrackRecord>,
    pub registration: Vec<RegistrationRecord>,
    pub seconds: f64,
    /// Error that stopped the run early, if any.
    pub failure: Option<String>,
}

/// Simulates one Monte Carlo run.
pub fn run_single(scenario: &Scenario, truth: &Truth, opts: &RunOptions, run: usize) -> RunRecord {
    let start = Instant::now();
    let mut record = RunRecord {
        run,
        ..Default::default()
    };
    if let Err(e) = run_into(scenario, truth, opts, run, &mut record) {
        record.failure = Some(e.to_string());
    }
    record.seconds = start.elapsed().as_secs_f64();
    record
}

fn run_into(scenario: &Scenario, truth: &Truth, opts: &RunOptions, run: usize, record: &mut RunRecord) -> Result<()> {
    let mut net = Network::new(scenario, opts)?;
    let sensor = scenario.sensor_model();
    let n = scenario.nodes.len();
    for t in 1..=scenario.steps {
        let states: Vec<DVector<f64>> = truth.at(t).iter().map(|(_, x)| x.clone()).collect();
        let scans: Vec<_> = (0..n)
            .map(|i| {
                let mut rng = stream_rng(opts.seed, run as u64, i as u64, t as u64, 1);
                generate_measurements(scenario, &sensor, &states, i, &mut rng)
            })
            .collect();
        let report = net.step(t, &scans)?;
        for i in 0..n {
            let local_truth: Vec<DVector<f64>> = states.iter().map(|x| scenario.to_local_state(i, x)).collect();
            let est = extract_states(&net.nodes[i].density);
            let d = ospa(&est, &local_truth, OSPA_CUTOFF, OSPA_ORDER)?;
            record.tracks.push(TrackRecord {
                run,
                step: t,
                node: i,
                ospa_m: d.distance,
                estimated_cardinality: net.nodes[i].density.mean_cardinality(),
                extracted_targets: est.len(),
                true_cardinality: states.len(),
                consensus_iterations: report.consensus_iterations,
            });
            if opts.mode != Mode::JsrDmt {
                continue;
            }
            let node = &net.nodes[i];
            for &j in &net.neighbors[i] {
                let truth_reg = net.true_params(i)[&j];
                let est_reg = net.fusion_params(i)[&j];
                let (de, ae) = registration_errors(&truth_reg, &est_reg);
                record.registration.push(RegistrationRecord {
                    run,
                    step: t,
                    node: i,
                    neighbor: j,
                    drift_error_m: de,
                    angle_error_rad: ae,
                    drift_x_m: est_reg.drift.x,
                    drift_y_m: est_reg.drift.y,
                    angle_rad: est_reg.angle,
                    reward: node.reward,
                    hypotheses: node.hypotheses.len(),
                    status: node.status,
                });
            }
        }
    }
    Ok(())
}

/// Runs `n_runs` independent Monte Carlo runs. Results are ordered by run
/// index and do not depend on scheduling.
pub fn run_monte_carlo(scenario: &Scenario, opts: &RunOptions, n_runs: usize) -> Result<Vec<RunRecord>> {
    if n_runs == 0 {
        return Err(Error::InvalidArgument("at least one run is needed".into()));
    }
    let truth = generate_truth(scenario);
    Ok((0..n_runs)
        .into_par_iter()
        .map(|r| run_single(scenario, &truth, opts, r))
        .collect())
}
