//! JSON scenarios: loading, validation, execution and persisted outputs.
//!
//! A scenario names a graph, the agent models, a protocol with its gains, a
//! reference trajectory, initial conditions and an integrator. Loading is
//! strict: unknown keys are rejected and schema errors carry the JSON
//! pointer of the offending value.
//!
//! Seeded random initial conditions draw, in order, one uniform `u ∈ [0, 1)`
//! per position component and then one per velocity component from
//! `ChaCha8Rng::seed_from_u64(seed)`, and set
//! `q = 1⊗q_d(0) + q_spread·(2u − 1)`, `v = 1⊗q̇_d(0) + v_spread·(2u − 1)`.

mod csv;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use csv::{csv_header, emit_csv, parse_csv, read_csv, write_csv};
pub use plot::{emit_plot, render_svg};

use crate::analysis::{certify_trace, storage, CertificationReport};
use crate::controllers::{ClosedLoop, ExternalInput, GainConfig, Protocol, ReferenceTrajectory};
use crate::dynamics::Network;
use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NetworkGraph};
use crate::integrate::{simulate, IntegratorConfig, SimTrace, TraceLayout, TraceMeta, Trajectory};
use crate::linalg::stack_copies;
use crate::models::ModelSpec;

pub const SEED_ENV: &str = "ELNETSIM_SEED";

/// Per-agent gain: one scalar for all agents, one scalar per agent, or one
/// `n × n` block per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeGain {
    Scalar(f64),
    PerAgent(Vec<f64>),
    Blocks(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeWeights {
    Scalar(f64),
    PerEdge(Vec<f64>),
}

impl Default for EdgeWeights {
    fn default() -> Self {
        EdgeWeights::Scalar(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SquareGain {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for SquareGain {
    fn default() -> Self {
        SquareGain::Scalar(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub pi: NodeGain,
    pub k: NodeGain,
    #[serde(default)]
    pub delta: EdgeWeights,
    #[serde(default)]
    pub k_zeta: SquareGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub protocol: Protocol,
    pub gains: GainSpec,
    /// Edge spring targets, `M·n` values in edge order. Default zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_d: Option<Vec<f64>>,
    /// Initial edge states; default `(Bᵀ⊗I) q(0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta0: Option<Vec<f64>>,
    /// Passive external input `u = −γ s` for the protocols that leave `u` free.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_damping: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInit {
    pub seed: u64,
    #[serde(default = "one")]
    pub q_spread: f64,
    #[serde(default)]
    pub v_spread: f64,
}

fn one() -> f64 {
    1.0
}

/// Either explicit `q` (with `v` defaulting to zero) or `random`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomInit>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// File stem; defaults to the scenario name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub graph: GraphSpec,
    /// Shared model for every agent. Exactly one of `model`, `models`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<ModelSpec>>,
    pub controller: ControllerSpec,
    pub reference: ReferenceTrajectory,
    pub initial: InitialSpec,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

/// A validated scenario ready to integrate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub closed_loop: ClosedLoop,
    pub x0: DVector<f64>,
    pub integrator: IntegratorConfig,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub trace: SimTrace,
    pub report: CertificationReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub report: PathBuf,
    pub plot: PathBuf,
}

/// JSON pointer (RFC 6901) for a serde path such as `graph.edges[2]`.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    parse_scenario(&fs::read_to_string(path)?)
}

/// Seed from `ELNETSIM_SEED`, if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Validation(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn expand_node_gain(name: &str, gain: &NodeGain, num_agents: usize, n: usize) -> Result<Vec<DMatrix<f64>>> {
    let eye = DMatrix::<f64>::identity(n, n);
    match gain {
        NodeGain::Scalar(g) => Ok(vec![&eye * *g; num_agents]),
        NodeGain::PerAgent(gs) => {
            if gs.len() != num_agents {
                return Err(Error::shape(format!("gain {name} (per agent)"), num_agents, gs.len()));
            }
            Ok(gs.iter().map(|g| &eye * *g).collect())
        }
        NodeGain::Blocks(blocks) => {
            if blocks.len() != num_agents {
                return Err(Error::shape(format!("gain {name} (blocks)"), num_agents, blocks.len()));
            }
            blocks.iter().map(|b| square(&format!("gain {name} block"), b, n)).collect()
        }
    }
}

fn square(what: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::shape(what, format!("{n}x{n}"), format!("{} rows", rows.len())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl GainSpec {
    pub fn build(&self, graph: &NetworkGraph) -> Result<GainConfig> {
        let (num_agents, n, m) = (graph.num_vertices(), graph.agent_dim(), graph.num_edges());
        let pi = expand_node_gain("pi", &self.pi, num_agents, n)?;
        let k = expand_node_gain("k", &self.k, num_agents, n)?;
        let delta = match &self.delta {
            EdgeWeights::Scalar(d) => DVector::from_element(m, *d),
            EdgeWeights::PerEdge(ds) => {
                if ds.len() != m {
                    return Err(Error::shape("gain delta (per edge)", m, ds.len()));
                }
                DVector::from_column_slice(ds)
            }
        };
        let k_zeta = match &self.k_zeta {
            SquareGain::Scalar(g) => DMatrix::identity(n, n) * *g,
            SquareGain::Matrix(rows) => square("gain k_zeta", rows, n)?,
        };
        let gains = GainConfig::from_blocks(&pi, &k, delta, k_zeta);
        gains.validate(graph)?;
        Ok(gains)
    }
}

fn vector(what: &str, values: &[f64], len: usize) -> Result<DVector<f64>> {
    if values.len() != len {
        return Err(Error::shape(what, len, values.len()));
    }
    let v = DVector::from_column_slice(values);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: what.to_string() });
    }
    Ok(v)
}

impl Scenario {
    pub fn stem(&self) -> String {
        self.output.stem.clone().unwrap_or_else(|| self.name.clone())
    }

    pub fn seed(&self) -> Option<u64> {
        self.initial.random.as_ref().map(|r| r.seed)
    }

    /// Replaces the random-initialization seed; no effect on explicit
    /// initial conditions.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let (Some(seed), Some(random)) = (seed, self.initial.random.as_mut()) {
            random.seed = seed;
        }
        self
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn network(&self) -> Result<Network> {
        let graph = NetworkGraph::from_spec(&self.graph)?;
        let n = graph.agent_dim();
        let models = match (&self.model, &self.models) {
            (Some(m), None) => vec![m.build(n)?; graph.num_vertices()],
            (None, Some(ms)) => {
                if ms.len() != graph.num_vertices() {
                    return Err(Error::shape("models", graph.num_vertices(), ms.len()));
                }
                ms.iter().map(|m| m.build(n)).collect::<Result<_>>()?
            }
            _ => return Err(Error::Validation("give exactly one of `model` or `models`".into())),
        };
        Network::new(graph, models)
    }

    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        let network = self.network()?;
        let graph = network.graph();
        let gains = self.controller.gains.build(graph)?;
        let mn = graph.num_edges() * graph.agent_dim();
        let zeta_d = self.controller.zeta_d.as_deref().map(|z| vector("zeta_d", z, mn)).transpose()?;
        let protocol = self.controller.protocol;
        if protocol.has_edge_states() {
            if self.controller.external_damping.is_some() {
                return Err(Error::Validation(format!("external_damping does not apply to {protocol}")));
            }
        } else if self.controller.zeta0.is_some() || self.controller.zeta_d.is_some() {
            return Err(Error::Validation(format!("zeta_d/zeta0 do not apply to {protocol}")));
        }
        let external = self.controller.external_damping.map_or(ExternalInput::Zero, ExternalInput::Damping);
        ClosedLoop::new(network, gains, self.reference.clone(), protocol, zeta_d, external)
    }

    /// Initial positions and velocities.
    pub fn initial_conditions(&self, num_agents: usize, n: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let nn = num_agents * n;
        let init = &self.initial;
        match (&init.q, &init.random) {
            (Some(q), None) => {
                let q = vector("initial.q", q, nn)?;
                let v = match &init.v {
                    Some(v) => vector("initial.v", v, nn)?,
                    None => DVector::zeros(nn),
                };
                Ok((q, v))
            }
            (None, Some(random)) => {
                if init.v.is_some() {
                    return Err(Error::Validation("initial.v cannot be combined with initial.random".into()));
                }
                for (name, spread) in [("q_spread", random.q_spread), ("v_spread", random.v_spread)] {
                    if !(spread >= 0.0 && spread.is_finite()) {
                        return Err(Error::param(format!("initial.random.{name}"), spread, "must be nonnegative"));
                    }
                }
                let r = self.reference.eval(0.0);
                let mut rng = ChaCha8Rng::seed_from_u64(random.seed);
                let mut q = stack_copies(&r.q, num_agents);
                for x in q.iter_mut() {
                    *x += random.q_spread * (2.0 * rng.gen::<f64>() - 1.0);
                }
                let mut v = stack_copies(&r.qd, num_agents);
                for x in v.iter_mut() {
                    *x += random.v_spread * (2.0 * rng.gen::<f64>() - 1.0);
                }
                Ok((q, v))
            }
            _ => Err(Error::Validation("initial needs exactly one of `q` or `random`".into())),
        }
    }

    pub fn prepare(&self) -> Result<Prepared> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation("name must not be empty".into()));
        }
        self.integrator.validate()?;
        let closed_loop = self.closed_loop()?;
        let network = closed_loop.network();
        let (q0, v0) = self.initial_conditions(network.num_agents(), network.dim())?;
        let zeta0 = self
            .controller
            .zeta0
            .as_deref()
            .map(|z| vector("zeta0", z, closed_loop.edge_len()))
            .transpose()?;
        let x0 = closed_loop.initial_state(&q0, &v0, zeta0.as_ref())?;
        Ok(Prepared {
            closed_loop,
            x0,
            integrator: self.integrator.clone(),
        })
    }

    /// Checks cross-shape consistency without simulating.
    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }

    pub fn layout(closed_loop: &ClosedLoop) -> TraceLayout {
        let network = closed_loop.network();
        TraceLayout {
            num_agents: network.num_agents(),
            agent_dim: network.dim(),
            num_edge_states: if closed_loop.protocol().has_edge_states() {
                network.graph().num_edges()
            } else {
                0
            },
        }
    }

    fn meta(&self) -> TraceMeta {
        TraceMeta {
            scenario_hash: self.hash(),
            protocol: self.controller.protocol.to_string(),
            config: serde_json::to_string(&self.integrator).expect("config serializes"),
        }
    }
}

/// Attaches torques and storage values to an integrated trajectory.
pub fn trace_from_trajectory(closed_loop: &ClosedLoop, traj: Trajectory, meta: TraceMeta) -> Result<SimTrace> {
    let mut tau = Vec::with_capacity(traj.len());
    let mut values = Vec::with_capacity(traj.len());
    for (t, x) in traj.times.iter().zip(&traj.states) {
        tau.push(closed_loop.control(*t, x)?);
        values.push(storage(closed_loop, *t, x)?);
    }
    let trace = SimTrace {
        layout: Scenario::layout(closed_loop),
        times: traj.times,
        states: traj.states,
        tau,
        storage: values,
        meta,
    };
    trace.validate()?;
    Ok(trace)
}

/// Integrates a prepared scenario; no certification.
pub fn simulate_prepared(prepared: &Prepared, meta: TraceMeta) -> Result<SimTrace> {
    let cl = &prepared.closed_loop;
    let traj = simulate(|t, x: &DVector<f64>| cl.rhs(t, x), &prepared.x0, &prepared.integrator)?;
    trace_from_trajectory(cl, traj, meta)
}

/// Simulates and certifies a scenario in memory.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun> {
    let prepared = scenario.prepare()?;
    let trace = simulate_prepared(&prepared, scenario.meta())?;
    let report = certify_trace(&trace, &prepared.closed_loop)?;
    Ok(ScenarioRun {
        trace,
        report,
        warnings: prepared.closed_loop.warnings().to_vec(),
    })
}

pub fn output_paths(dir: &Path, stem: &str) -> OutputPaths {
    OutputPaths {
        csv: dir.join(format!("{stem}.csv")),
        report: dir.join(format!("{stem}.report.json")),
        plot: dir.join(format!("{stem}.svg")),
    }
}

pub fn write_report(report: &CertificationReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_outputs(run: &ScenarioRun, dir: &Path, stem: &str) -> Result<OutputPaths> {
    fs::create_dir_all(dir)?;
    let paths = output_paths(dir, stem);
    emit_csv(&run.trace, &paths.csv)?;
    write_report(&run.report, &paths.report)?;
    emit_plot(&run.trace, &paths.plot)?;
    Ok(paths)
}

/// Runs a scenario and writes CSV, report and plot into `dir`. On blow-up
/// the partial trace is written to `<stem>.partial.csv` before the error is
/// returned.
pub fn execute(scenario: &Scenario, dir: &Path) -> Result<(ScenarioRun, OutputPaths)> {
    match run_scenario(scenario) {
        Ok(run) => {
            let paths = write_outputs(&run, dir, &scenario.stem())?;
            Ok((run, paths))
        }
        Err(Error::BlowUp { last_time, partial }) => {
            let prepared = scenario.prepare()?;
            fs::create_dir_all(dir)?;
            let trace = trace_from_trajectory(&prepared.closed_loop, (*partial).clone(), scenario.meta())?;
            emit_csv(&trace, dir.join(format!("{}.partial.csv", scenario.stem())))?;
            Err(Error::BlowUp { last_time, partial })
        }
        Err(e) => Err(e),
    }
}
