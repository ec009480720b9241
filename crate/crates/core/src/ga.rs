//! Hybrid genetic algorithm over migration schedules.
//!
//! Chromosomes are [`Schedule`]s. Crossover splices two parents at a cut
//! timestamp, mutation touches exactly one action, and the surviving part of a
//! population is carried into the next planning round after the window moves.
//! The best schedule of a run gets one greedy best-cost-fit pass.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::{Evaluator, FitnessBreakdown, FitnessWeights};
use crate::forecasting::ForecastWindow;
use crate::geotraces::{GeoTraceSet, PPueModel};
use crate::model::{Action, Cloud, CloudState, PmId, Schedule, VmId};
use crate::rng::{stream, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    /// Generation budget.
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elite_count: usize,
    /// Share of the previous population carried into the next round.
    pub propagate_fraction: f64,
    /// Probability that a random schedule has an action for a given
    /// `(vm, t)` slot.
    pub init_action_prob: f64,
    pub seed: u64,
    /// Optional wall-clock cap per run; breaks run-to-run determinism.
    pub time_limit_ms: Option<u64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            generations: 200,
            crossover_rate: 0.7,
            mutation_rate: 0.3,
            elite_count: 1,
            propagate_fraction: 0.5,
            init_action_prob: 0.1,
            seed: 0,
            time_limit_ms: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("ga.population_size must be at least 2".into()));
        }
        if self.elite_count < 1 || self.elite_count > self.population_size {
            return Err(Error::Config("ga.elite_count must be in 1..=population_size".into()));
        }
        for (name, v) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
            ("propagate_fraction", self.propagate_fraction),
            ("init_action_prob", self.init_action_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("ga.{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub schedule: Schedule,
    pub fitness: FitnessBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    /// Sorted by total fitness, best first.
    pub members: Vec<Member>,
    pub window: ForecastWindow,
}

impl Population {
    pub fn best(&self) -> Option<&Member> {
        self.members.first()
    }
}

/// Each `(vm, t)` slot independently receives an action with probability
/// `p_action`, targeting a uniformly drawn PM.
pub fn random_schedule(
    vms: &[VmId],
    pm_count: usize,
    window: ForecastWindow,
    p_action: f64,
    rng: &mut impl Rng,
) -> Schedule {
    let mut schedule = Schedule::empty(window);
    if pm_count == 0 || p_action <= 0.0 {
        return schedule;
    }
    for t in 0..window.length {
        for vm in vms {
            if rng.random_bool(p_action.min(1.0)) {
                let pm = PmId(rng.random_range(0..pm_count) as u32);
                schedule.set(t, Action::new(*vm, pm));
            }
        }
    }
    schedule
}

/// Child follows `a` before offset `cut` and `b` from `cut` on. `cut` may be
/// `0` (child equals `b`) up to the window length (child equals `a`).
pub fn crossover_at(a: &Schedule, b: &Schedule, cut: usize) -> Result<Schedule> {
    if a.window() != b.window() {
        return Err(Error::WindowMismatch);
    }
    let cut = cut.min(a.len());
    let steps = a.steps()[..cut].iter().chain(&b.steps()[cut..]).cloned().collect();
    Ok(Schedule::from_parts(*a.window(), steps))
}

/// Crossover with a uniformly drawn cut in `0..=len`.
pub fn crossover(a: &Schedule, b: &Schedule, rng: &mut impl Rng) -> Result<Schedule> {
    let cut = rng.random_range(0..=a.len());
    crossover_at(a, b, cut)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    Retarget,
    Delete,
    Insert,
}

/// Applies exactly one of retarget / delete / insert; all other actions are
/// left as they were. An empty schedule always takes the insert branch.
pub fn mutate(s: &Schedule, vms: &[VmId], pm_count: usize, rng: &mut impl Rng) -> Schedule {
    mutate_with_kind(s, vms, pm_count, rng).0
}

pub fn mutate_with_kind(
    s: &Schedule,
    vms: &[VmId],
    pm_count: usize,
    rng: &mut impl Rng,
) -> (Schedule, Option<Mutation>) {
    let mut out = s.clone();
    if pm_count == 0 || s.len() == 0 {
        return (out, None);
    }
    let count = s.action_count();
    let kind = if count == 0 {
        Mutation::Insert
    } else {
        match rng.random_range(0..3) {
            0 => Mutation::Retarget,
            1 => Mutation::Delete,
            _ => Mutation::Insert,
        }
    };
    match kind {
        Mutation::Retarget | Mutation::Delete => {
            let (t, action) = s.actions().nth(rng.random_range(0..count)).expect("index below count");
            if kind == Mutation::Delete {
                out.remove(t, action.vm);
            } else {
                let pm = random_other_pm(action.pm, pm_count, rng);
                out.set(t, Action::new(action.vm, pm));
            }
        }
        Mutation::Insert => {
            if vms.is_empty() {
                return (out, None);
            }
            let t = rng.random_range(0..s.len());
            let vm = vms[rng.random_range(0..vms.len())];
            let pm = match s.action_for(t, vm) {
                Some(existing) => random_other_pm(existing.pm, pm_count, rng),
                None => PmId(rng.random_range(0..pm_count) as u32),
            };
            out.set(t, Action::new(vm, pm));
        }
    }
    (out, Some(kind))
}

fn random_other_pm(current: PmId, pm_count: usize, rng: &mut impl Rng) -> PmId {
    if pm_count < 2 {
        return current;
    }
    let draw = rng.random_range(0..pm_count - 1) as u32;
    PmId(if draw >= current.0 { draw + 1 } else { draw })
}

/// Strips outdated actions and actions on deleted VMs, re-indexing the rest
/// onto `new_window`.
pub fn strip_outdated(schedule: &Schedule, new_window: ForecastWindow, deleted: &BTreeSet<VmId>) -> Schedule {
    let mut out = Schedule::empty(new_window);
    for (t, action) in schedule.actions() {
        if deleted.contains(&action.vm) {
            continue;
        }
        if let Some(offset) = new_window.offset_of(schedule.timestamp(t)) {
            out.set(offset, action);
        }
    }
    out
}

/// Carries the best `ceil(propagate_fraction * population_size)` members of
/// `pop` into `new_window` and refills the rest with random schedules.
pub fn propagate(
    pop: &Population,
    new_window: ForecastWindow,
    deleted: &BTreeSet<VmId>,
    config: &GaConfig,
    vms: &[VmId],
    pm_count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Schedule>> {
    if new_window.start <= pop.window.start {
        return Err(Error::WindowNotLater {
            current: pop.window.start,
            requested: new_window.start,
        });
    }
    let keep = ((config.propagate_fraction * config.population_size as f64).ceil() as usize)
        .min(pop.members.len())
        .min(config.population_size);
    let mut out: Vec<Schedule> = pop.members[..keep]
        .iter()
        .map(|m| strip_outdated(&m.schedule, new_window, deleted))
        .collect();
    while out.len() < config.population_size {
        out.push(random_schedule(vms, pm_count, new_window, config.init_action_prob, rng));
    }
    Ok(out)
}

fn sort_members(members: &mut [Member]) {
    members.sort_by(|a, b| a.fitness.total.total_cmp(&b.fitness.total));
}

fn evaluate_all(eval: &Evaluator, schedules: Vec<Schedule>) -> Result<Vec<Member>> {
    schedules
        .into_par_iter()
        .map(|schedule| {
            let fitness = eval.evaluate(&schedule)?;
            Ok(Member { schedule, fitness })
        })
        .collect()
}

/// Size-2 tournament on a population sorted best first.
fn tournament<'a>(members: &'a [Member], rng: &mut SimRng) -> &'a Member {
    let a = rng.random_range(0..members.len());
    let b = rng.random_range(0..members.len());
    &members[a.min(b)]
}

/// One best-cost-fit pass: VMs in decreasing size order, each tried on every
/// PM at the first window step; a move is kept only if it strictly improves
/// the total and the target PM stays within capacity.
pub fn local_improvement(eval: &Evaluator, best: &Schedule) -> Result<(Schedule, FitnessBreakdown)> {
    let mut current = eval.complete(best)?;
    let mut fitness = eval.evaluate(&current)?;
    for vm in eval.vms_by_decreasing_size() {
        let mut winner: Option<(Schedule, FitnessBreakdown)> = None;
        for pm in 0..eval.pm_count() {
            let pm = PmId(pm as u32);
            if eval.first_step_host(&current, vm)? == Some(pm) {
                continue;
            }
            let mut candidate = current.clone();
            if eval.base_host(vm) == Some(pm) {
                candidate.remove(0, vm);
            } else {
                candidate.set(0, Action::new(vm, pm));
            }
            if !eval.first_step_fits(&candidate, pm)? {
                continue;
            }
            let f = eval.evaluate(&candidate)?;
            let bar = winner.as_ref().map_or(fitness.total, |(_, w)| w.total);
            if f.total < bar {
                winner = Some((candidate, f));
            }
        }
        if let Some((s, f)) = winner {
            current = s;
            fitness = f;
        }
    }
    Ok((current, fitness))
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    /// Best schedule after local improvement, with default placements made
    /// explicit.
    pub best: Schedule,
    pub fitness: FitnessBreakdown,
    /// Best total at the initial population and after each generation.
    pub best_per_generation: Vec<f64>,
    pub generations_run: usize,
    pub population: Population,
}

/// Runs the hybrid GA on the planning problem captured by `eval`.
///
/// `carried`, when given, is the previous round's population; it is
/// propagated into this window first. Deterministic for a fixed
/// `config.seed` regardless of the rayon thread count.
pub fn evolve(eval: &Evaluator, config: &GaConfig, carried: Option<&Population>) -> Result<GaOutcome> {
    config.validate()?;
    let window = *eval.window();
    let vms = eval.vm_ids().to_vec();
    let pm_count = eval.pm_count();
    let started = Instant::now();
    let mut rng = stream(config.seed, &[0x696e_6974]);

    let mut initial = match carried {
        Some(pop) if pop.window.start < window.start => {
            let known: BTreeSet<VmId> = vms.iter().copied().collect();
            let deleted: BTreeSet<VmId> = pop
                .members
                .iter()
                .flat_map(|m| m.schedule.actions().map(|(_, a)| a.vm))
                .filter(|vm| !known.contains(vm))
                .collect();
            propagate(pop, window, &deleted, config, &vms, pm_count, &mut rng)?
        }
        _ => (0..config.population_size)
            .map(|_| random_schedule(&vms, pm_count, window, config.init_action_prob, &mut rng))
            .collect(),
    };
    // Keep the do-nothing plan in every population as a baseline.
    if !initial.iter().any(Schedule::is_empty) {
        let last = initial.len() - 1;
        initial[last] = Schedule::empty(window);
    }
    let mut members = evaluate_all(eval, initial)?;
    sort_members(&mut members);

    let mut history = vec![members[0].fitness.total];
    let limit = config.time_limit_ms.map(Duration::from_millis);
    let mut generations_run = 0;
    for generation in 0..config.generations {
        if limit.is_some_and(|l| started.elapsed() >= l) {
            break;
        }
        let parents = &members;
        let offspring: Vec<Member> = (config.elite_count..config.population_size)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(config.seed, &[generation as u64, i as u64]);
                let a = tournament(parents, &mut rng);
                let mut child = if rng.random_bool(config.crossover_rate) {
                    let b = tournament(parents, &mut rng);
                    crossover(&a.schedule, &b.schedule, &mut rng)?
                } else {
                    a.schedule.clone()
                };
                if rng.random_bool(config.mutation_rate) {
                    child = mutate(&child, &vms, pm_count, &mut rng);
                }
                let fitness = eval.evaluate(&child)?;
                Ok(Member {
                    schedule: child,
                    fitness,
                })
            })
            .collect::<Result<_>>()?;
        let mut next: Vec<Member> = members[..config.elite_count].to_vec();
        next.extend(offspring);
        sort_members(&mut next);
        members = next;
        history.push(members[0].fitness.total);
        generations_run += 1;
    }

    let (best, fitness) = local_improvement(eval, &members[0].schedule)?;
    members[0] = Member {
        schedule: best.clone(),
        fitness,
    };
    sort_members(&mut members);
    Ok(GaOutcome {
        best,
        fitness,
        best_per_generation: history,
        generations_run,
        population: Population { members, window },
    })
}

/// Convenience wrapper that builds the [`Evaluator`] and calls [`evolve`].
#[allow(clippy::too_many_arguments)]
pub fn run_ga(
    cloud: &Cloud,
    state: &CloudState,
    forecasts: &GeoTraceSet,
    ppue: &PPueModel,
    weights: &FitnessWeights,
    config: &GaConfig,
    window: ForecastWindow,
    carried: Option<&Population>,
) -> Result<GaOutcome> {
    let eval = Evaluator::new(cloud, state, forecasts, ppue, weights, window)?;
    evolve(&eval, config, carried)
}
