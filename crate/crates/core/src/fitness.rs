//! Decision-support components of a schedule and their weighted combination.
//!
//! Two routes compute the same numbers: the free functions replay a schedule
//! into a trajectory of [`CloudState`] values and measure it, while
//! [`Evaluator`] works on flat load vectors and is what the GA calls in its
//! inner loop. Tests keep the two in agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::ForecastWindow;
use crate::geotraces::{GeoTraceSet, PPueModel};
use crate::model::{Action, Cloud, CloudState, PmId, RequestKind, Resources, Schedule, VmId, VmRequest};
use crate::placement::best_fit;
use crate::timeseries::{TimeSeries, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessWeights {
    pub energy: f64,
    pub consolid: f64,
    pub migration: f64,
    pub constraint: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self {
            energy: 1.0,
            consolid: 0.1,
            migration: 0.5,
            constraint: 10.0,
        }
    }
}

impl FitnessWeights {
    pub fn new(energy: f64, consolid: f64, migration: f64, constraint: f64) -> Result<Self> {
        let w = Self {
            energy,
            consolid,
            migration,
            constraint,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.energy, self.consolid, self.migration, self.constraint];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("fitness weights must be finite and non-negative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one fitness weight must be positive".into()));
        }
        Ok(())
    }
}

/// Component values of one schedule evaluation. Lower is better throughout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitnessBreakdown {
    pub energy_cost_usd: f64,
    /// Cost of running every PM at peak over the window; normalizes energy.
    pub energy_ceiling_usd: f64,
    pub consolid: f64,
    pub migration_penalty: f64,
    pub constraint_penalty: f64,
    pub migrations: usize,
    pub total: f64,
}

impl FitnessBreakdown {
    fn combine(
        weights: &FitnessWeights,
        energy_cost_usd: f64,
        energy_ceiling_usd: f64,
        consolid: f64,
        migrations: usize,
        migration_penalty: f64,
        constraint_penalty: f64,
    ) -> Self {
        let energy_norm = if energy_ceiling_usd > 0.0 {
            energy_cost_usd / energy_ceiling_usd
        } else {
            0.0
        };
        let total = weights.energy * energy_norm
            + weights.consolid * consolid
            + weights.migration * migration_penalty
            + weights.constraint * constraint_penalty;
        Self {
            energy_cost_usd,
            energy_ceiling_usd,
            consolid,
            migration_penalty,
            constraint_penalty,
            migrations,
            total,
        }
    }
}

/// USD per watt drawn for one step at each location, for each timestamp.
pub(crate) fn cost_coefficients(
    cloud: &Cloud,
    traces: &GeoTraceSet,
    ppue: &PPueModel,
    timestamps: impl Iterator<Item = Timestamp>,
    step_hours: f64,
) -> Result<Vec<Vec<f64>>> {
    timestamps
        .map(|t| {
            cloud
                .locations()
                .iter()
                .map(|loc| {
                    let price = traces.get(&loc.price_trace_key)?.price_at(t)?;
                    let temp = traces.get(&loc.temperature_trace_key)?.temperature_at(t)?;
                    Ok(ppue.ppue(temp) * price * step_hours / 1000.0)
                })
                .collect()
        })
        .collect()
}

pub(crate) fn step_hours(step: chrono::TimeDelta) -> f64 {
    step.num_seconds() as f64 / 3600.0
}

/// Energy cost of holding `state` for one step, given per-location cost
/// coefficients (USD per watt for the step). Suspended PMs draw nothing.
pub(crate) fn state_step_cost(cloud: &Cloud, state: &CloudState, coeff: &[f64]) -> Result<f64> {
    let mut cost = 0.0;
    for pm in cloud.pms() {
        if state.is_suspended(pm.id)? {
            continue;
        }
        let util = state.utilisation(cloud, pm.id)?;
        cost += pm.power(util) * coeff[pm.location.0 as usize];
    }
    Ok(cost)
}

/// Replays `schedule` from `state`. Entry `t` is the state after the
/// requests and then the actions stamped at window step `t`.
///
/// A delete cancels whatever actions remain for that VM.
pub fn trajectory(state: &CloudState, schedule: &Schedule, requests: &[VmRequest]) -> Result<TimeSeries<CloudState>> {
    let window = schedule.window();
    let mut current = state.clone();
    let mut deleted = std::collections::BTreeSet::new();
    let mut states = Vec::with_capacity(window.length);
    for t in 0..window.length {
        let ts = window.timestamp(t);
        for r in requests.iter().filter(|r| r.t == ts) {
            match r.kind {
                RequestKind::Delete => {
                    current.delete(r.vm)?;
                    deleted.insert(r.vm);
                }
                RequestKind::Boot => current.boot(r.vm)?,
            }
        }
        for action in schedule.step(t) {
            if deleted.contains(&action.vm) {
                continue;
            }
            current.apply_in_place(*action)?;
        }
        current.set_epoch(ts);
        states.push(current.clone());
    }
    TimeSeries::new(window.start, window.step, states)
}

/// Σ_t Σ_active pm P(pm, util) × pPUE(temp) × price × Δt.
pub fn energy_cost(
    cloud: &Cloud,
    trajectory: &TimeSeries<CloudState>,
    traces: &GeoTraceSet,
    ppue: &PPueModel,
) -> Result<f64> {
    let coeffs = cost_coefficients(cloud, traces, ppue, trajectory.index(), step_hours(trajectory.step()))?;
    let mut total = 0.0;
    for (state, coeff) in trajectory.values().iter().zip(&coeffs) {
        total += state_step_cost(cloud, state, coeff)?;
    }
    Ok(total)
}

/// Cost of running every PM at peak power over `window`.
pub fn energy_ceiling(cloud: &Cloud, window: &ForecastWindow, traces: &GeoTraceSet, ppue: &PPueModel) -> Result<f64> {
    let coeffs = cost_coefficients(
        cloud,
        traces,
        ppue,
        (0..window.length).map(|t| window.timestamp(t)),
        step_hours(window.step),
    )?;
    let mut total = 0.0;
    for coeff in &coeffs {
        for pm in cloud.pms() {
            total += pm.power_peak * coeff[pm.location.0 as usize];
        }
    }
    Ok(total)
}

/// `1 - mean_pm(mean of the positive utilisation values of pm)`.
///
/// `per_pm[i]` is the utilisation series of PM `i`. A PM that is never on
/// counts as perfectly consolidated.
pub fn consolid_from_utilisation(per_pm: &[Vec<f64>]) -> f64 {
    if per_pm.is_empty() {
        return 0.0;
    }
    let mut sum_of_means = 0.0;
    for series in per_pm {
        let (mut sum, mut count) = (0.0, 0usize);
        for &u in series.iter().filter(|u| **u > 0.0) {
            sum += u.min(1.0);
            count += 1;
        }
        sum_of_means += if count == 0 { 1.0 } else { sum / count as f64 };
    }
    1.0 - sum_of_means / per_pm.len() as f64
}

pub fn consolid(cloud: &Cloud, trajectory: &TimeSeries<CloudState>) -> Result<f64> {
    let per_pm = cloud
        .pms()
        .iter()
        .map(|pm| {
            trajectory
                .values()
                .iter()
                .map(|s| s.utilisation(cloud, pm.id))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(consolid_from_utilisation(&per_pm))
}

/// Number of actions in `schedule` that move an already placed VM to a
/// different PM. Placing a pending VM is not a migration.
pub fn count_migrations(state: &CloudState, schedule: &Schedule) -> usize {
    let mut hosts = state.placements().clone();
    let mut count = 0;
    for (_, Action { vm, pm }) in schedule.actions() {
        match hosts.get(&vm) {
            Some(&src) if src != pm => {
                count += 1;
                hosts.insert(vm, pm);
            }
            Some(_) => {}
            None if state.is_pending(vm) => {
                hosts.insert(vm, pm);
            }
            None => {}
        }
    }
    count
}

/// Migrations normalized by `|VMs| × |fw|`.
pub fn migration_penalty(state: &CloudState, schedule: &Schedule) -> f64 {
    let slots = state.vm_ids().len() * schedule.len();
    if slots == 0 {
        return 0.0;
    }
    count_migrations(state, schedule) as f64 / slots as f64
}

/// Fraction of `(pm, t)` pairs over capacity.
pub fn constraint_penalty(cloud: &Cloud, trajectory: &TimeSeries<CloudState>) -> f64 {
    let slots = cloud.pms().len() * trajectory.len();
    if slots == 0 {
        return 0.0;
    }
    let violations: usize = trajectory
        .values()
        .iter()
        .map(|s| cloud.pms().iter().filter(|pm| !s.capacity_ok(cloud, pm.id)).count())
        .sum();
    violations as f64 / slots as f64
}

/// Weighted, normalized sum of all components for `schedule` applied to
/// `state` under the forecast `traces`.
pub fn total_fitness(
    cloud: &Cloud,
    state: &CloudState,
    schedule: &Schedule,
    traces: &GeoTraceSet,
    ppue: &PPueModel,
    weights: &FitnessWeights,
) -> Result<FitnessBreakdown> {
    weights.validate()?;
    let traj = trajectory(state, schedule, &[])?;
    let energy = energy_cost(cloud, &traj, traces, ppue)?;
    let ceiling = energy_ceiling(cloud, schedule.window(), traces, ppue)?;
    let cons = consolid(cloud, &traj)?;
    let migrations = count_migrations(state, schedule);
    let mig = migration_penalty(state, schedule);
    let constraint = constraint_penalty(cloud, &traj);
    Ok(FitnessBreakdown::combine(
        weights, energy, ceiling, cons, migrations, mig, constraint,
    ))
}

pub(crate) const NOT_PLACED: u32 = u32::MAX;

/// Precomputed evaluation context for one planning round.
///
/// With `complete_pending` set, VMs still pending after the first step's
/// actions get a best-fit default placement before that step is measured,
/// which mirrors what a controller does with VMs it does not place
/// explicitly. [`Evaluator::complete`] materializes those default actions.
#[derive(Debug, Clone)]
pub struct Evaluator {
    window: ForecastWindow,
    weights: FitnessWeights,
    vm_ids: Vec<VmId>,
    demand: Vec<Resources>,
    base_host: Vec<u32>,
    base_load: Vec<Resources>,
    capacity: Vec<Resources>,
    pm_location: Vec<usize>,
    power_idle: Vec<f64>,
    power_span: Vec<f64>,
    coeff: Vec<Vec<f64>>,
    first_step_price: Vec<f64>,
    pending_order: Vec<usize>,
    size_order: Vec<usize>,
    ceiling: f64,
    complete_pending: bool,
}

impl Evaluator {
    pub fn new(
        cloud: &Cloud,
        state: &CloudState,
        forecasts: &GeoTraceSet,
        ppue: &PPueModel,
        weights: &FitnessWeights,
        window: ForecastWindow,
    ) -> Result<Self> {
        weights.validate()?;
        if state.pm_count() != cloud.pms().len() {
            return Err(Error::Config("state and cloud disagree on the PM count".into()));
        }
        let vm_ids = state.vm_ids();
        let mut demand = Vec::with_capacity(vm_ids.len());
        let mut base_host = Vec::with_capacity(vm_ids.len());
        let mut base_load = vec![Resources::ZERO; cloud.pms().len()];
        for vm in &vm_ids {
            let d = cloud.vm(*vm)?.resources;
            demand.push(d);
            match state.host_of(*vm) {
                Some(pm) => {
                    base_host.push(pm.0);
                    base_load[pm.index()] = base_load[pm.index()] + d;
                }
                None => base_host.push(NOT_PLACED),
            }
        }
        let coeff = cost_coefficients(
            cloud,
            forecasts,
            ppue,
            (0..window.length).map(|t| window.timestamp(t)),
            step_hours(window.step),
        )?;
        let ceiling = energy_ceiling(cloud, &window, forecasts, ppue)?;
        let first_step_price = cloud
            .pms()
            .iter()
            .map(|pm| {
                let loc = &cloud.locations()[pm.location.0 as usize];
                forecasts.get(&loc.price_trace_key)?.price_at(window.start)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut pending_order: Vec<usize> = (0..vm_ids.len()).filter(|&i| base_host[i] == NOT_PLACED).collect();
        let sizes: Vec<f64> = vm_ids.iter().map(|vm| cloud.vm_size(*vm)).collect::<Result<_>>()?;
        pending_order.sort_by(|&a, &b| sizes[b].total_cmp(&sizes[a]).then(vm_ids[a].cmp(&vm_ids[b])));
        let mut size_order: Vec<usize> = (0..vm_ids.len()).collect();
        size_order.sort_by(|&a, &b| sizes[b].total_cmp(&sizes[a]).then(vm_ids[a].cmp(&vm_ids[b])));

        Ok(Self {
            window,
            weights: *weights,
            vm_ids,
            demand,
            base_host,
            base_load,
            capacity: cloud.pms().iter().map(|p| p.capacity).collect(),
            pm_location: cloud.pms().iter().map(|p| p.location.0 as usize).collect(),
            power_idle: cloud.pms().iter().map(|p| p.power_idle).collect(),
            power_span: cloud.pms().iter().map(|p| p.power_peak - p.power_idle).collect(),
            coeff,
            first_step_price,
            pending_order,
            size_order,
            ceiling,
            complete_pending: true,
        })
    }

    /// Evaluate schedules exactly as given, leaving unplaced VMs pending.
    pub fn without_default_placement(mut self) -> Self {
        self.complete_pending = false;
        self
    }

    pub fn window(&self) -> &ForecastWindow {
        &self.window
    }

    pub fn weights(&self) -> &FitnessWeights {
        &self.weights
    }

    /// VMs the schedule may act on, in id order.
    pub fn vm_ids(&self) -> &[VmId] {
        &self.vm_ids
    }

    pub fn pm_count(&self) -> usize {
        self.capacity.len()
    }

    pub fn is_pending(&self, vm: VmId) -> bool {
        self.index_of(vm).is_some_and(|i| self.base_host[i] == NOT_PLACED)
    }

    fn index_of(&self, vm: VmId) -> Option<usize> {
        self.vm_ids.binary_search(&vm).ok()
    }

    /// Host of `vm` before any action of the window.
    pub fn base_host(&self, vm: VmId) -> Option<PmId> {
        let i = self.index_of(vm)?;
        (self.base_host[i] != NOT_PLACED).then(|| PmId(self.base_host[i]))
    }

    /// VMs ordered by decreasing size, ties by id.
    pub fn vms_by_decreasing_size(&self) -> Vec<VmId> {
        self.size_order.iter().map(|&i| self.vm_ids[i]).collect()
    }

    /// Host of `vm` once the first step of `schedule` (and any default
    /// placement) has been applied.
    pub fn first_step_host(&self, schedule: &Schedule, vm: VmId) -> Result<Option<PmId>> {
        let (host, _) = self.first_step(schedule)?;
        let i = self.index_of(vm).ok_or(Error::UnknownVm(vm))?;
        Ok((host[i] != NOT_PLACED).then(|| PmId(host[i])))
    }

    /// Whether `pm` is within capacity after the first step of `schedule`.
    pub fn first_step_fits(&self, schedule: &Schedule, pm: PmId) -> Result<bool> {
        let (_, load) = self.first_step(schedule)?;
        let cap = self.capacity.get(pm.index()).ok_or(Error::UnknownPm(pm))?;
        Ok(load[pm.index()].fits_within(cap))
    }

    fn first_step(&self, schedule: &Schedule) -> Result<(Vec<u32>, Vec<Resources>)> {
        self.check_window(schedule)?;
        let mut host = self.base_host.clone();
        let mut load = self.base_load.clone();
        self.apply_step(schedule, 0, &mut host, &mut load)?;
        if self.complete_pending {
            self.default_placements(&mut host, &mut load);
        }
        Ok((host, load))
    }

    pub(crate) fn base_state(&self) -> (Vec<u32>, Vec<Resources>) {
        (self.base_host.clone(), self.base_load.clone())
    }

    pub(crate) fn demand_of(&self, i: usize) -> Resources {
        self.demand[i]
    }

    pub(crate) fn capacities(&self) -> &[Resources] {
        &self.capacity
    }

    /// Applies default placements in place when enabled.
    pub(crate) fn settle_first_step(&self, host: &mut [u32], load: &mut [Resources]) {
        if self.complete_pending {
            self.default_placements(host, load);
        }
    }

    fn apply_step(&self, schedule: &Schedule, t: usize, host: &mut [u32], load: &mut [Resources]) -> Result<usize> {
        let mut migrations = 0;
        for a in schedule.step(t) {
            let i = self.index_of(a.vm).ok_or(Error::UnknownVm(a.vm))?;
            if a.pm.index() >= self.capacity.len() {
                return Err(Error::UnknownPm(a.pm));
            }
            let cur = host[i];
            if cur == a.pm.0 {
                continue;
            }
            if cur != NOT_PLACED {
                load[cur as usize] = load[cur as usize] - self.demand[i];
                migrations += 1;
            }
            load[a.pm.index()] = load[a.pm.index()] + self.demand[i];
            host[i] = a.pm.0;
        }
        Ok(migrations)
    }

    /// Default placements for VMs left pending after the first step, as
    /// `(vm index, pm index)` pairs in placement order.
    fn default_placements(&self, host: &mut [u32], load: &mut [Resources]) -> Vec<(usize, usize)> {
        let mut placed = Vec::new();
        for &i in &self.pending_order {
            if host[i] != NOT_PLACED {
                continue;
            }
            if let Some(pm) = best_fit(load, &self.capacity, self.demand[i], &self.first_step_price) {
                load[pm] = load[pm] + self.demand[i];
                host[i] = pm as u32;
                placed.push((i, pm));
            }
        }
        placed
    }

    fn check_window(&self, schedule: &Schedule) -> Result<()> {
        let w = schedule.window();
        if w.start != self.window.start || w.length != self.window.length || w.step != self.window.step {
            return Err(Error::WindowMismatch);
        }
        Ok(())
    }

    pub fn evaluate(&self, schedule: &Schedule) -> Result<FitnessBreakdown> {
        self.check_window(schedule)?;
        let n_pm = self.capacity.len();
        let mut host = self.base_host.clone();
        let mut load = self.base_load.clone();
        let mut migrations = 0;
        let mut energy = 0.0;
        let mut violations = 0usize;
        let mut pos_sum = vec![0.0; n_pm];
        let mut pos_count = vec![0usize; n_pm];
        for t in 0..self.window.length {
            migrations += self.apply_step(schedule, t, &mut host, &mut load)?;
            if t == 0 && self.complete_pending {
                self.default_placements(&mut host, &mut load);
            }
            let coeff = &self.coeff[t];
            for pm in 0..n_pm {
                let l = load[pm];
                if l.is_zero() {
                    continue;
                }
                let cap = &self.capacity[pm];
                let util = l.ratio_of(cap).min(1.0);
                energy += (self.power_idle[pm] + self.power_span[pm] * util) * coeff[self.pm_location[pm]];
                pos_sum[pm] += util;
                pos_count[pm] += 1;
                if !l.fits_within(cap) {
                    violations += 1;
                }
            }
        }
        let consolid = if n_pm == 0 {
            0.0
        } else {
            let mut sum_of_means = 0.0;
            for pm in 0..n_pm {
                sum_of_means += if pos_count[pm] == 0 {
                    1.0
                } else {
                    pos_sum[pm] / pos_count[pm] as f64
                };
            }
            1.0 - sum_of_means / n_pm as f64
        };
        let vm_slots = self.vm_ids.len() * self.window.length;
        let migration_penalty = if vm_slots == 0 {
            0.0
        } else {
            migrations as f64 / vm_slots as f64
        };
        let constraint_penalty = violations as f64 / (n_pm * self.window.length) as f64;
        Ok(FitnessBreakdown::combine(
            &self.weights,
            energy,
            self.ceiling,
            consolid,
            migrations,
            migration_penalty,
            constraint_penalty,
        ))
    }

    /// `schedule` plus explicit first-step actions for the default placements
    /// [`Evaluator::evaluate`] would make. Evaluating the result with or
    /// without default placement gives the same breakdown.
    pub fn complete(&self, schedule: &Schedule) -> Result<Schedule> {
        self.check_window(schedule)?;
        let mut host = self.base_host.clone();
        let mut load = self.base_load.clone();
        self.apply_step(schedule, 0, &mut host, &mut load)?;
        let mut out = schedule.clone();
        for (i, pm) in self.default_placements(&mut host, &mut load) {
            out.set(0, Action::new(self.vm_ids[i], PmId(pm as u32)));
        }
        Ok(out)
    }
}
