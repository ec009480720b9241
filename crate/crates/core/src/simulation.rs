//! Discrete-time engine. Each step applies user requests, hands forecasts to a
//! controller, executes the first step of the returned schedule and books the
//! realized cost against ground-truth traces.

use std::path::PathBuf;
use std::time::Instant;

use chrono::{TimeDelta, TimeZone, Utc};
use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::baselines::{bfd_place, brute_force_optimum, BruteForceLimits};
use crate::config::{grid_points, GridAxis, ScenarioSource};
use crate::error::{Error, Result};
use crate::fitness::{cost_coefficients, state_step_cost, step_hours, Evaluator, FitnessBreakdown, FitnessWeights};
use crate::forecasting::{forecast, perturb, ErrorModel, ForecastMethod, ForecastWindow};
use crate::ga::{evolve, GaConfig, Population};
use crate::geotraces::{load_traces, synthesize_traces, GeoTraceSet, PPueModel, SynthParams};
use crate::model::{
    Action, Cloud, CloudState, Location, LocationId, PhysicalMachine, PmId, RequestKind, Resources, Schedule,
    VirtualMachine, VmId, VmRequest,
};
use crate::rng::{derive_seed, stream};
use crate::timeseries::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Ga,
    Bfd,
    Brute,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Ga => "ga",
            ControllerKind::Bfd => "bfd",
            ControllerKind::Brute => "brute",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ga" => Ok(Self::Ga),
            "bfd" => Ok(Self::Bfd),
            "brute" => Ok(Self::Brute),
            other => Err(Error::Config(format!(
                "unknown controller `{other}` (expected ga, bfd or brute)"
            ))),
        }
    }
}

/// One homogeneous PM class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmClass {
    pub cpu: u32,
    pub ram_gb: u32,
    pub power_idle: f64,
    pub power_peak: f64,
}

impl Default for PmClass {
    fn default() -> Self {
        Self {
            cpu: 16,
            ram_gb: 64,
            power_idle: 120.0,
            power_peak: 250.0,
        }
    }
}

/// PMs are spread round-robin over the locations, so PM `i` sits at location
/// `i % locations.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inventory {
    /// Location names; each doubles as the trace key.
    pub locations: Vec<String>,
    pub pm_count: usize,
    pub pm: PmClass,
}

impl Default for Inventory {
    fn default() -> Self {
        Self {
            locations: vec!["north".into(), "central".into(), "south".into()],
            pm_count: 40,
            pm: PmClass::default(),
        }
    }
}

impl Inventory {
    pub fn build_cloud(&self) -> Result<Cloud> {
        if self.locations.is_empty() {
            return Err(Error::Config("inventory.locations must not be empty".into()));
        }
        let locations = self
            .locations
            .iter()
            .enumerate()
            .map(|(i, name)| Location {
                id: LocationId(i as u32),
                name: name.clone(),
                price_trace_key: name.clone(),
                temperature_trace_key: name.clone(),
            })
            .collect();
        let pms = (0..self.pm_count)
            .map(|i| PhysicalMachine {
                id: PmId(i as u32),
                capacity: Resources::new(self.pm.cpu, self.pm.ram_gb),
                location: LocationId((i % self.locations.len()) as u32),
                power_idle: self.pm.power_idle,
                power_peak: self.pm.power_peak,
            })
            .collect();
        Cloud::new(locations, pms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flavor {
    pub cpu: u32,
    pub ram_gb: u32,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadParams {
    /// Mean boots per step (Poisson).
    pub arrival_rate: f64,
    /// Mean VM lifetime in steps (geometric, at least one step).
    pub mean_lifetime: f64,
    /// VMs booted at step 0 on top of the Poisson arrivals.
    pub initial_vms: usize,
    pub flavors: Vec<Flavor>,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            arrival_rate: 4.0,
            mean_lifetime: 50.0,
            initial_vms: 200,
            flavors: vec![
                Flavor {
                    cpu: 1,
                    ram_gb: 2,
                    weight: 4.0,
                },
                Flavor {
                    cpu: 2,
                    ram_gb: 4,
                    weight: 3.0,
                },
                Flavor {
                    cpu: 4,
                    ram_gb: 8,
                    weight: 2.0,
                },
            ],
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate >= 0.0) || !self.arrival_rate.is_finite() {
            return Err(Error::Config(
                "workload.arrival_rate must be finite and non-negative".into(),
            ));
        }
        if !(self.mean_lifetime >= 1.0) || !self.mean_lifetime.is_finite() {
            return Err(Error::Config("workload.mean_lifetime must be at least one step".into()));
        }
        if self.flavors.is_empty() {
            return Err(Error::Config("workload.flavors must not be empty".into()));
        }
        for f in &self.flavors {
            if f.cpu == 0 || f.ram_gb == 0 || !(f.weight > 0.0) {
                return Err(Error::Config(
                    "workload flavors need positive cpu, ram_gb and weight".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub vms: Vec<VirtualMachine>,
    /// Sorted by time; within a step deletes come before boots.
    pub requests: Vec<VmRequest>,
}

/// `1 + Geometric(1 / mean)` failures, so the mean is `mean` and every VM
/// lives at least one step.
pub fn sample_lifetime(rng: &mut impl Rng, mean: f64) -> u64 {
    let geo = Geometric::new(1.0 / mean).expect("mean lifetime >= 1");
    1 + geo.sample(rng)
}

/// Boot arrivals and their deletes over `steps` steps from `start`.
/// Lifetimes ending past the horizon produce no delete.
pub fn generate_workload(
    seed: u64,
    params: &WorkloadParams,
    start: Timestamp,
    step: TimeDelta,
    steps: usize,
) -> Result<Workload> {
    params.validate()?;
    let mut rng = stream(seed, &[0x776b_6c64]);
    let flavor_pick =
        WeightedIndex::new(params.flavors.iter().map(|f| f.weight)).map_err(|e| Error::Config(e.to_string()))?;
    let poisson = (params.arrival_rate > 0.0)
        .then(|| Poisson::new(params.arrival_rate).map_err(|e| Error::Config(e.to_string())))
        .transpose()?;
    let mut vms = Vec::new();
    let mut requests = Vec::new();
    for k in 0..steps {
        let mut boots = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        if k == 0 {
            boots += params.initial_vms;
        }
        for _ in 0..boots {
            let id = VmId(vms.len() as u64);
            let f = &params.flavors[flavor_pick.sample(&mut rng)];
            vms.push(VirtualMachine {
                id,
                resources: Resources::new(f.cpu, f.ram_gb),
            });
            let t = start + step * k as i32;
            requests.push(VmRequest {
                t,
                kind: RequestKind::Boot,
                vm: id,
            });
            let end = k as u64 + sample_lifetime(&mut rng, params.mean_lifetime);
            if end < steps as u64 {
                requests.push(VmRequest {
                    t: start + step * end as i32,
                    kind: RequestKind::Delete,
                    vm: id,
                });
            }
        }
    }
    requests.sort_by_key(|r| (r.t, r.kind == RequestKind::Boot, r.vm));
    Ok(Workload { vms, requests })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSource {
    /// Trace CSV. When absent, traces are synthesized from the scenario seed.
    pub file: Option<PathBuf>,
    pub synthetic: SynthParams,
}

/// What the controller sees of future prices.
///
/// Without `model`, the ground truth over the window is perturbed with
/// relative error `sigma`. With a `model`, the current step is observed and
/// later steps are forecast from the price history, then perturbed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub sigma: f64,
    pub model: Option<ForecastMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub controller: ControllerKind,
    pub start: Timestamp,
    pub horizon_hours: u32,
    pub step_hours: u32,
    /// Forecast window length in steps.
    pub forecast_window: usize,
    pub inventory: Inventory,
    pub workload: WorkloadParams,
    pub traces: TraceSource,
    pub forecast: ForecastConfig,
    pub ga: GaConfig,
    pub weights: FitnessWeights,
    pub ppue: PPueModel,
    pub brute: BruteForceLimits,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            controller: ControllerKind::Ga,
            start: Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(),
            horizon_hours: 672,
            step_hours: 1,
            forecast_window: ForecastWindow::DEFAULT_LENGTH,
            inventory: Inventory::default(),
            workload: WorkloadParams::default(),
            traces: TraceSource::default(),
            forecast: ForecastConfig::default(),
            ga: GaConfig::default(),
            weights: FitnessWeights::default(),
            ppue: PPueModel::default(),
            brute: BruteForceLimits::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.step_hours == 0 {
            return Err(Error::Config("step_hours must be positive".into()));
        }
        if self.horizon_hours == 0 || self.horizon_hours % self.step_hours != 0 {
            return Err(Error::Config(
                "horizon_hours must be a positive multiple of step_hours".into(),
            ));
        }
        if self.inventory.pm_count == 0 {
            return Err(Error::Config("inventory.pm_count must be positive".into()));
        }
        if self.forecast_window == 0 {
            return Err(Error::Config("forecast_window must be at least 1".into()));
        }
        if !(self.forecast.sigma >= 0.0) || !self.forecast.sigma.is_finite() {
            return Err(Error::Config("forecast.sigma must be finite and non-negative".into()));
        }
        self.workload.validate()?;
        self.ga.validate()?;
        self.weights.validate()?;
        self.ppue.validate()?;
        Ok(())
    }

    pub fn step(&self) -> TimeDelta {
        TimeDelta::hours(self.step_hours as i64)
    }

    pub fn steps(&self) -> usize {
        (self.horizon_hours / self.step_hours) as usize
    }

    /// Ground-truth traces covering the horizon.
    pub fn ground_truth(&self) -> Result<GeoTraceSet> {
        let set = match &self.traces.file {
            Some(path) => load_traces(path)?,
            None => synthesize_traces(
                derive_seed(self.seed, &[2]),
                &self.inventory.locations,
                self.start,
                self.step(),
                self.steps(),
                &self.traces.synthetic,
            )?,
        };
        for name in &self.inventory.locations {
            set.get(name)?;
        }
        set.slice(self.start, self.steps())
    }
}

/// Controller-visible prices for `window`.
pub fn build_forecasts(
    truth: &GeoTraceSet,
    window: &ForecastWindow,
    config: &ForecastConfig,
    seed: u64,
    step: usize,
) -> Result<GeoTraceSet> {
    let mut set = truth.slice(window.start, window.length)?;
    for (li, trace) in set.iter_mut().enumerate() {
        if let (Some(method), true) = (config.model, window.length > 1) {
            let full = &truth.get(&trace.location)?.prices;
            let pos = full.position(window.start).ok_or_else(|| Error::TraceGap {
                location: trace.location.clone(),
                timestamp: window.start,
            })?;
            let history = full
                .slice(full.start(), pos + 1)
                .expect("position is inside the series");
            let method = match method {
                ForecastMethod::Sma { k } => ForecastMethod::Sma {
                    k: k.min(history.len()),
                },
                m => m,
            };
            let ahead = ForecastWindow::new(window.timestamp(1), window.length - 1, window.step)?;
            let predicted = forecast(&history, &ahead, method)?;
            for (dst, v) in trace.prices.values_mut()[1..].iter_mut().zip(predicted.values()) {
                *dst = v.max(0.0);
            }
        }
        if config.sigma > 0.0 {
            let model = ErrorModel::new(config.sigma, derive_seed(seed, &[4, step as u64, li as u64]))?;
            trace.prices = perturb(&trace.prices, &model);
        }
    }
    Ok(set)
}

pub struct PlanContext<'a> {
    pub cloud: &'a Cloud,
    pub state: &'a CloudState,
    pub forecasts: &'a GeoTraceSet,
    pub ppue: &'a PPueModel,
    pub weights: &'a FitnessWeights,
    pub window: ForecastWindow,
    pub step: usize,
}

impl PlanContext<'_> {
    pub fn evaluator(&self) -> Result<Evaluator> {
        Evaluator::new(
            self.cloud,
            self.state,
            self.forecasts,
            self.ppue,
            self.weights,
            self.window,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub schedule: Schedule,
    /// Fitness of `schedule` under the forecasts the controller saw.
    pub fitness: FitnessBreakdown,
}

pub trait Controller {
    fn kind(&self) -> ControllerKind;
    fn plan(&mut self, ctx: &PlanContext<'_>) -> Result<Plan>;
}

pub struct GaController {
    config: GaConfig,
    seed: u64,
    carried: Option<Population>,
}

impl GaController {
    pub fn new(config: GaConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            carried: None,
        }
    }
}

impl Controller for GaController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Ga
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Result<Plan> {
        let eval = ctx.evaluator()?;
        if eval.vm_ids().is_empty() {
            let schedule = Schedule::empty(ctx.window);
            let fitness = eval.evaluate(&schedule)?;
            return Ok(Plan { schedule, fitness });
        }
        let config = GaConfig {
            seed: derive_seed(self.seed, &[3, self.config.seed, ctx.step as u64]),
            ..self.config.clone()
        };
        let out = evolve(&eval, &config, self.carried.as_ref())?;
        self.carried = Some(out.population);
        Ok(Plan {
            schedule: out.best,
            fitness: out.fitness,
        })
    }
}

pub struct BfdController;

impl Controller for BfdController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Bfd
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Result<Plan> {
        let placed = bfd_place(ctx.cloud, ctx.state, ctx.forecasts, ctx.window)?;
        let fitness = ctx.evaluator()?.evaluate(&placed.schedule)?;
        Ok(Plan {
            schedule: placed.schedule,
            fitness,
        })
    }
}

pub struct BruteController {
    pub limits: BruteForceLimits,
}

impl Controller for BruteController {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Brute
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Result<Plan> {
        let eval = ctx.evaluator()?;
        let (schedule, fitness) = brute_force_optimum(&eval, &self.limits)?;
        let schedule = eval.complete(&schedule)?;
        Ok(Plan { schedule, fitness })
    }
}

pub fn make_controller(scenario: &Scenario) -> Box<dyn Controller> {
    match scenario.controller {
        ControllerKind::Ga => Box::new(GaController::new(scenario.ga.clone(), scenario.seed)),
        ControllerKind::Bfd => Box::new(BfdController),
        ControllerKind::Brute => Box::new(BruteController { limits: scenario.brute }),
    }
}

/// Executes `actions` against `state`, skipping any that would overflow the
/// target PM. Actions blocked only by ordering (a swap, say) are retried
/// until no further action fits. Returns `(migrations, rejected)`.
pub fn execute_actions(cloud: &Cloud, state: &mut CloudState, actions: &[Action]) -> Result<(usize, usize)> {
    let mut remaining: Vec<Action> = actions
        .iter()
        .filter(|a| state.contains(a.vm) && state.host_of(a.vm) != Some(a.pm))
        .copied()
        .collect();
    let mut migrations = 0;
    loop {
        let before = remaining.len();
        let mut blocked = Vec::new();
        for a in remaining {
            let cap = cloud.pm(a.pm)?.capacity;
            let demand = cloud.vm(a.vm)?.resources;
            if (state.load(cloud, a.pm)? + demand).fits_within(&cap) {
                migrations += state.apply_in_place(a)? as usize;
            } else {
                blocked.push(a);
            }
        }
        remaining = blocked;
        if remaining.is_empty() || remaining.len() == before {
            break;
        }
    }
    Ok((migrations, remaining.len()))
}

/// One step's `1 - mean over PMs` of utilisation, where a PM with no load
/// counts as fully consolidated.
pub fn step_consolid(cloud: &Cloud, state: &CloudState) -> Result<f64> {
    let n = cloud.pms().len();
    let mut sum = 0.0;
    for pm in cloud.pms() {
        let u = state.utilisation(cloud, pm.id)?;
        sum += if u > 0.0 { u } else { 1.0 };
    }
    Ok(1.0 - sum / n as f64)
}

/// Energy cost of holding `state` for one step at `t`, priced with `truth`.
pub fn realized_step_cost(
    cloud: &Cloud,
    state: &CloudState,
    truth: &GeoTraceSet,
    ppue: &PPueModel,
    t: Timestamp,
    step: TimeDelta,
) -> Result<f64> {
    let coeff = cost_coefficients(cloud, truth, ppue, std::iter::once(t), step_hours(step))?;
    state_step_cost(cloud, state, &coeff[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub timestamp: Timestamp,
    pub energy_cost_usd: f64,
    pub migrations: usize,
    pub consolid: f64,
    pub pending: usize,
    pub placed: usize,
    pub rejected_actions: usize,
    pub planned: FitnessBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub controller: ControllerKind,
    pub seed: u64,
    pub total_energy_cost_usd: f64,
    pub migration_count: usize,
    pub mean_consolid: f64,
    pub pending_vm_steps: usize,
    pub rejected_actions: usize,
    /// Steps that ended with VMs still waiting for capacity.
    pub saturated_steps: usize,
    pub booted: usize,
    pub deleted: usize,
    /// `booted - deleted == placed + pending` held at every step.
    pub conservation_ok: bool,
    /// Mean of the per-step planned fitness components.
    pub mean_planned: FitnessBreakdown,
    pub steps: Vec<StepRecord>,
    /// The resolved scenario this report was produced from.
    pub config: serde_json::Value,
    /// Controller wall-clock time. Kept out of the JSON so reports stay
    /// byte-identical across runs.
    #[serde(skip)]
    pub controller_wall_clock_ms: f64,
}

pub const STEP_CSV_HEADER: [&str; 6] = [
    "step",
    "timestamp",
    "energy_cost_usd",
    "migrations",
    "consolid",
    "pending",
];

impl CostReport {
    pub fn write_steps_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(STEP_CSV_HEADER)?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                s.energy_cost_usd.to_string(),
                s.migrations.to_string(),
                s.consolid.to_string(),
                s.pending.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn run_simulation(scenario: &Scenario) -> Result<CostReport> {
    scenario.validate()?;
    let truth = scenario.ground_truth()?;
    let mut controller = make_controller(scenario);
    run_with(scenario, &truth, controller.as_mut())
}

/// Runs `scenario` against `truth` with an explicit controller.
pub fn run_with(scenario: &Scenario, truth: &GeoTraceSet, controller: &mut dyn Controller) -> Result<CostReport> {
    scenario.validate()?;
    let steps = scenario.steps();
    let step = scenario.step();
    let workload = generate_workload(
        derive_seed(scenario.seed, &[1]),
        &scenario.workload,
        scenario.start,
        step,
        steps,
    )?;
    let cloud = scenario
        .inventory
        .build_cloud()?
        .with_vms(workload.vms.iter().cloned())?;
    let mut state = CloudState::new(cloud.pms().len(), scenario.start);

    let mut records = Vec::with_capacity(steps);
    let mut next_request = 0;
    let (mut booted, mut deleted) = (0usize, 0usize);
    let mut conservation_ok = true;
    let mut wall = 0.0;
    for k in 0..steps {
        let t = scenario.start + step * k as i32;
        state.set_epoch(t);
        while let Some(r) = workload.requests.get(next_request).filter(|r| r.t <= t) {
            match r.kind {
                RequestKind::Delete => {
                    state.delete(r.vm)?;
                    deleted += 1;
                }
                RequestKind::Boot => {
                    state.boot(r.vm)?;
                    booted += 1;
                }
            }
            next_request += 1;
        }

        let window = ForecastWindow::new(t, scenario.forecast_window.min(steps - k), step)?;
        let forecasts = build_forecasts(truth, &window, &scenario.forecast, scenario.seed, k)?;
        let ctx = PlanContext {
            cloud: &cloud,
            state: &state,
            forecasts: &forecasts,
            ppue: &scenario.ppue,
            weights: &scenario.weights,
            window,
            step: k,
        };
        let started = Instant::now();
        let plan = controller.plan(&ctx)?;
        wall += started.elapsed().as_secs_f64() * 1000.0;

        let (migrations, rejected) = execute_actions(&cloud, &mut state, plan.schedule.step(0))?;
        let energy = realized_step_cost(&cloud, &state, truth, &scenario.ppue, t, step)?;
        let consolid = step_consolid(&cloud, &state)?;
        let pending = state.pending().len();
        let placed = state.placed_count();
        conservation_ok &= booted - deleted == placed + pending;
        records.push(StepRecord {
            step: k,
            timestamp: t,
            energy_cost_usd: energy,
            migrations,
            consolid,
            pending,
            placed,
            rejected_actions: rejected,
            planned: plan.fitness,
        });
    }

    let n = records.len().max(1) as f64;
    let mut mean_planned = FitnessBreakdown::default();
    for r in &records {
        let p = &r.planned;
        mean_planned.energy_cost_usd += p.energy_cost_usd / n;
        mean_planned.energy_ceiling_usd += p.energy_ceiling_usd / n;
        mean_planned.consolid += p.consolid / n;
        mean_planned.migration_penalty += p.migration_penalty / n;
        mean_planned.constraint_penalty += p.constraint_penalty / n;
        mean_planned.total += p.total / n;
        mean_planned.migrations += p.migrations;
    }
    mean_planned.migrations = (mean_planned.migrations as f64 / n).round() as usize;

    Ok(CostReport {
        controller: controller.kind(),
        seed: scenario.seed,
        total_energy_cost_usd: records.iter().map(|r| r.energy_cost_usd).sum(),
        migration_count: records.iter().map(|r| r.migrations).sum(),
        mean_consolid: records.iter().map(|r| r.consolid).sum::<f64>() / n,
        pending_vm_steps: records.iter().map(|r| r.pending).sum(),
        rejected_actions: records.iter().map(|r| r.rejected_actions).sum(),
        saturated_steps: records.iter().filter(|r| r.pending > 0).count(),
        booted,
        deleted,
        conservation_ok,
        mean_planned,
        steps: records,
        config: serde_json::to_value(scenario)?,
        controller_wall_clock_ms: wall,
    })
}

/// One independent run per grid point, in grid order. `sink` sees every
/// result as soon as it is available; failed runs are passed on, not fatal.
pub fn sweep(
    source: &ScenarioSource,
    base_overrides: &[(String, String)],
    axes: &[GridAxis],
    mut sink: impl FnMut(&[(String, String)], &Result<CostReport>) -> Result<()>,
) -> Result<usize> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::Config("sweep grid must not be empty".into()));
    }
    let points = grid_points(axes);
    for point in &points {
        let overrides: Vec<(String, String)> = base_overrides.iter().chain(point).cloned().collect();
        let result = source.resolve(&overrides).and_then(|s| run_simulation(&s));
        sink(point, &result)?;
    }
    Ok(points.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::hour;

    fn start() -> Timestamp {
        Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn zero_arrival_rate_gives_empty_workload() {
        let p = WorkloadParams {
            arrival_rate: 0.0,
            initial_vms: 0,
            ..WorkloadParams::default()
        };
        let w = generate_workload(1, &p, start(), hour(), 100).unwrap();
        assert!(w.vms.is_empty() && w.requests.is_empty());
    }

    #[test]
    fn each_boot_has_at_most_one_later_delete() {
        let w = generate_workload(5, &WorkloadParams::default(), start(), hour(), 200).unwrap();
        for vm in &w.vms {
            let mine: Vec<_> = w.requests.iter().filter(|r| r.vm == vm.id).collect();
            assert_eq!(mine[0].kind, RequestKind::Boot);
            assert!(mine.len() <= 2);
            if let Some(d) = mine.get(1) {
                assert_eq!(d.kind, RequestKind::Delete);
                assert!(d.t > mine[0].t);
            }
        }
        assert_eq!(
            w,
            generate_workload(5, &WorkloadParams::default(), start(), hour(), 200).unwrap()
        );
    }

    #[test]
    fn mean_lifetime_is_close_to_parameter() {
        let mut rng = stream(11, &[]);
        let n = 10_000;
        let mean = (0..n).map(|_| sample_lifetime(&mut rng, 24.0)).sum::<u64>() as f64 / n as f64;
        assert!((mean - 24.0).abs() / 24.0 < 0.1, "mean {mean}");
    }

    #[test]
    fn execution_guards_capacity_and_resolves_swaps() {
        let mut scenario = Scenario::default();
        scenario.inventory.pm_count = 2;
        scenario.inventory.pm = PmClass {
            cpu: 4,
            ram_gb: 4,
            ..PmClass::default()
        };
        let cloud = scenario
            .inventory
            .build_cloud()
            .unwrap()
            .with_vms([
                VirtualMachine {
                    id: VmId(0),
                    resources: Resources::new(3, 3),
                },
                VirtualMachine {
                    id: VmId(1),
                    resources: Resources::new(3, 3),
                },
                VirtualMachine {
                    id: VmId(2),
                    resources: Resources::new(2, 2),
                },
            ])
            .unwrap();
        let mut state = CloudState::new(2, start());
        for vm in 0..3 {
            state.boot(VmId(vm)).unwrap();
        }
        let (m, rejected) = execute_actions(
            &cloud,
            &mut state,
            &[
                Action::new(VmId(0), PmId(0)),
                Action::new(VmId(1), PmId(0)),
                Action::new(VmId(2), PmId(1)),
            ],
        )
        .unwrap();
        assert_eq!((m, rejected), (0, 1));
        assert!(state.is_pending(VmId(1)));
        assert!(cloud.pms().iter().all(|pm| state.capacity_ok(&cloud, pm.id)));
    }

    #[test]
    fn sigma_zero_forecasts_equal_truth() {
        let names = vec!["a".to_string(), "b".to_string()];
        let truth = synthesize_traces(3, &names, start(), hour(), 48, &SynthParams::default()).unwrap();
        let w = ForecastWindow::new(start() + hour() * 5, 12, hour()).unwrap();
        let f = build_forecasts(&truth, &w, &ForecastConfig::default(), 7, 5).unwrap();
        assert_eq!(f, truth.slice(w.start, 12).unwrap());
        let noisy = build_forecasts(
            &truth,
            &w,
            &ForecastConfig {
                sigma: 0.1,
                model: None,
            },
            7,
            5,
        )
        .unwrap();
        assert_ne!(noisy, f);
        let persisted = ForecastConfig {
            sigma: 0.0,
            model: Some(ForecastMethod::Persistence),
        };
        let p = build_forecasts(&truth, &w, &persisted, 7, 5).unwrap();
        let now = truth.get("a").unwrap().price_at(w.start).unwrap();
        assert!(p.get("a").unwrap().prices.values().iter().all(|v| *v == now));
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario::default().validate().is_ok());
        let bad = Scenario {
            horizon_hours: 5,
            step_hours: 2,
            ..Scenario::default()
        };
        assert!(bad.validate().is_err());
        let mut empty = Scenario::default();
        empty.inventory.pm_count = 0;
        assert!(empty.validate().is_err());
    }
}
