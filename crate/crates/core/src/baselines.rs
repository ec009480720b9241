//! Reference controllers: best-fit-decreasing placement with no migrations,
//! and an exhaustive optimum for instances small enough to enumerate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::{Evaluator, FitnessBreakdown, NOT_PLACED};
use crate::forecasting::ForecastWindow;
use crate::geotraces::GeoTraceSet;
use crate::model::{Action, Cloud, CloudState, PmId, Resources, Schedule, VmId};
use crate::placement::best_fit;

#[derive(Debug, Clone, PartialEq)]
pub struct BfdPlacement {
    /// Placement actions, all at the first window step.
    pub schedule: Schedule,
    /// VMs no PM could take; they stay pending.
    pub unplaced: Vec<VmId>,
}

/// Places pending VMs largest first on the feasible PM with the least spare
/// capacity afterwards, ties going to the cheaper forecast price at the
/// window start. Running VMs are never moved.
pub fn bfd_place(
    cloud: &Cloud,
    state: &CloudState,
    forecasts: &GeoTraceSet,
    window: ForecastWindow,
) -> Result<BfdPlacement> {
    let mut loads: Vec<Resources> = (0..cloud.pms().len())
        .map(|i| state.load(cloud, PmId(i as u32)))
        .collect::<Result<_>>()?;
    let capacities: Vec<Resources> = cloud.pms().iter().map(|p| p.capacity).collect();
    let prices = cloud
        .pms()
        .iter()
        .map(|pm| {
            let loc = &cloud.locations()[pm.location.0 as usize];
            forecasts.get(&loc.price_trace_key)?.price_at(window.start)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pending: Vec<(f64, VmId)> = state
        .pending()
        .iter()
        .map(|vm| Ok((cloud.vm_size(*vm)?, *vm)))
        .collect::<Result<_>>()?;
    pending.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut schedule = Schedule::empty(window);
    let mut unplaced = Vec::new();
    for (_, vm) in pending {
        let demand = cloud.vm(vm)?.resources;
        match best_fit(&loads, &capacities, demand, &prices) {
            Some(pm) => {
                loads[pm] = loads[pm] + demand;
                schedule.set(0, Action::new(vm, PmId(pm as u32)));
            }
            None => unplaced.push(vm),
        }
    }
    Ok(BfdPlacement { schedule, unplaced })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BruteForceLimits {
    pub max_combinations: u64,
}

impl Default for BruteForceLimits {
    fn default() -> Self {
        Self {
            max_combinations: 1_000_000,
        }
    }
}

/// `log10` of the number of candidate schedules.
///
/// Each `(vm, t)` slot of a running VM has `pm_count` outcomes (staying put
/// is the move to its own host), and a pending VM has one more.
pub fn search_space_log10(pm_count: usize, placed_vms: usize, pending_vms: usize, window_len: usize) -> f64 {
    let n = pm_count as f64;
    window_len as f64 * (placed_vms as f64 * n.log10() + pending_vms as f64 * (n + 1.0).log10())
}

/// Splits `log10_count` into a mantissa in `[1, 10)` and an exponent.
pub fn scientific(log10_count: f64) -> (f64, i64) {
    let exponent = log10_count.floor();
    (10f64.powf(log10_count - exponent), exponent as i64)
}

/// Exact optimum of the evaluator's objective by enumeration.
///
/// Schedules are visited in lexicographic slot order (`t`, then VM id) with
/// "no action" before PM 0, 1, ... Ties in total fitness go to fewer
/// migrations, then to the earlier schedule. Partial schedules whose
/// accumulated migration and capacity penalties already exceed the best total
/// are skipped, which never changes the result.
pub fn brute_force_optimum(eval: &Evaluator, limits: &BruteForceLimits) -> Result<(Schedule, FitnessBreakdown)> {
    let pending = eval.vm_ids().iter().filter(|vm| eval.is_pending(**vm)).count();
    let placed = eval.vm_ids().len() - pending;
    let log10_count = search_space_log10(eval.pm_count(), placed, pending, eval.window().length);
    if log10_count > (limits.max_combinations as f64).log10() + 1e-9 {
        let (mantissa, exponent) = scientific(log10_count);
        return Err(Error::SearchSpaceTooLarge {
            log10_count,
            mantissa,
            exponent,
            limit: limits.max_combinations,
        });
    }
    let (host, load) = eval.base_state();
    let mut search = Search {
        eval,
        schedule: Schedule::empty(*eval.window()),
        best: None,
    };
    search.step(0, host, load, 0, 0)?;
    let best = search.best.expect("at least the empty schedule is visited");
    Ok(best)
}

struct Search<'a> {
    eval: &'a Evaluator,
    schedule: Schedule,
    best: Option<(Schedule, FitnessBreakdown)>,
}

impl Search<'_> {
    fn bound(&self, migrations: usize, violations: usize) -> f64 {
        let w = self.eval.weights();
        let len = self.eval.window().length;
        let vm_slots = (self.eval.vm_ids().len() * len).max(1) as f64;
        let pm_slots = (self.eval.pm_count() * len) as f64;
        w.migration * migrations as f64 / vm_slots + w.constraint * violations as f64 / pm_slots
    }

    fn pruned(&self, migrations: usize, violations: usize) -> bool {
        self.best
            .as_ref()
            .is_some_and(|(_, b)| self.bound(migrations, violations) > b.total)
    }

    /// Enumerates every choice for step `t` starting from `host`/`load`.
    fn step(
        &mut self,
        t: usize,
        host: Vec<u32>,
        load: Vec<Resources>,
        migrations: usize,
        violations: usize,
    ) -> Result<()> {
        let mut host = host;
        let mut load = load;
        self.slot(t, 0, &mut host, &mut load, migrations, violations)
    }

    fn slot(
        &mut self,
        t: usize,
        i: usize,
        host: &mut Vec<u32>,
        load: &mut Vec<Resources>,
        migrations: usize,
        violations: usize,
    ) -> Result<()> {
        if i == self.eval.vm_ids().len() {
            return self.finish_step(t, host, load, migrations, violations);
        }
        // no action
        self.slot(t, i + 1, host, load, migrations, violations)?;
        let vm = self.eval.vm_ids()[i];
        let demand = self.eval.demand_of(i);
        let cur = host[i];
        for pm in 0..self.eval.pm_count() as u32 {
            if pm == cur {
                continue;
            }
            let moved = cur != NOT_PLACED;
            if moved {
                load[cur as usize] = load[cur as usize] - demand;
            }
            load[pm as usize] = load[pm as usize] + demand;
            host[i] = pm;
            self.schedule.set(t, Action::new(vm, PmId(pm)));
            let m = migrations + moved as usize;
            if !self.pruned(m, violations) {
                self.slot(t, i + 1, host, load, m, violations)?;
            }
            self.schedule.remove(t, vm);
            host[i] = cur;
            load[pm as usize] = load[pm as usize] - demand;
            if moved {
                load[cur as usize] = load[cur as usize] + demand;
            }
        }
        Ok(())
    }

    fn finish_step(
        &mut self,
        t: usize,
        host: &[u32],
        load: &[Resources],
        migrations: usize,
        violations: usize,
    ) -> Result<()> {
        let mut host = host.to_vec();
        let mut load = load.to_vec();
        if t == 0 {
            self.eval.settle_first_step(&mut host, &mut load);
        }
        let over = load
            .iter()
            .zip(self.eval.capacities())
            .filter(|(l, c)| !l.fits_within(c))
            .count();
        let violations = violations + over;
        if self.pruned(migrations, violations) {
            return Ok(());
        }
        if t + 1 < self.eval.window().length {
            return self.step(t + 1, host, load, migrations, violations);
        }
        let fitness = self.eval.evaluate(&self.schedule)?;
        let better = match &self.best {
            None => true,
            Some((_, b)) => fitness.total < b.total || (fitness.total == b.total && fitness.migrations < b.migrations),
        };
        if better {
            self.best = Some((self.schedule.clone(), fitness));
        }
        Ok(())
    }
}
