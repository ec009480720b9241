//! Cloud domain types: machines, requests, control actions, schedules and the
//! allocation state that migrations move between.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::ForecastWindow;
use crate::timeseries::{TimeSeries, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VmId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PmId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationId(pub u32);

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vm{}", self.0)
    }
}

impl fmt::Display for PmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pm{}", self.0)
    }
}

impl PmId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Resource vector in whole units: CPU cores and GB of RAM.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resources {
    pub cpu: u32,
    pub ram_gb: u32,
}

impl Resources {
    pub const ZERO: Resources = Resources { cpu: 0, ram_gb: 0 };

    pub fn new(cpu: u32, ram_gb: u32) -> Self {
        Self { cpu, ram_gb }
    }

    pub fn is_zero(&self) -> bool {
        self.cpu == 0 && self.ram_gb == 0
    }

    pub fn all_positive(&self) -> bool {
        self.cpu > 0 && self.ram_gb > 0
    }

    /// Component-wise `self <= capacity`.
    pub fn fits_within(&self, capacity: &Resources) -> bool {
        self.cpu <= capacity.cpu && self.ram_gb <= capacity.ram_gb
    }

    /// Bottleneck ratio: the largest per-resource fraction of `capacity`.
    pub fn ratio_of(&self, capacity: &Resources) -> f64 {
        let cpu = self.cpu as f64 / capacity.cpu as f64;
        let ram = self.ram_gb as f64 / capacity.ram_gb as f64;
        cpu.max(ram)
    }
}

impl Add for Resources {
    type Output = Resources;

    fn add(self, rhs: Resources) -> Resources {
        Resources {
            cpu: self.cpu + rhs.cpu,
            ram_gb: self.ram_gb + rhs.ram_gb,
        }
    }
}

impl Sub for Resources {
    type Output = Resources;

    fn sub(self, rhs: Resources) -> Resources {
        Resources {
            cpu: self.cpu - rhs.cpu,
            ram_gb: self.ram_gb - rhs.ram_gb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualMachine {
    pub id: VmId,
    pub resources: Resources,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalMachine {
    pub id: PmId,
    pub capacity: Resources,
    pub location: LocationId,
    /// Watts drawn when powered on with no load.
    pub power_idle: f64,
    /// Watts drawn at full utilisation.
    pub power_peak: f64,
}

impl PhysicalMachine {
    /// Linear power model: idle draw plus the dynamic span scaled by load.
    pub fn power(&self, utilisation: f64) -> f64 {
        self.power_idle + (self.power_peak - self.power_idle) * utilisation.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: LocationId,
    pub name: String,
    pub price_trace_key: String,
    pub temperature_trace_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Boot,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmRequest {
    pub t: Timestamp,
    pub kind: RequestKind,
    pub vm: VmId,
}

/// Migrate (or, for a pending VM, place) `vm` onto `pm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action {
    pub vm: VmId,
    pub pm: PmId,
}

impl Action {
    pub fn new(vm: VmId, pm: PmId) -> Self {
        Self { vm, pm }
    }
}

/// Static inventory of a scenario plus the registry of every VM seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    locations: Vec<Location>,
    pms: Vec<PhysicalMachine>,
    vms: BTreeMap<VmId, VirtualMachine>,
}

impl Cloud {
    pub fn new(locations: Vec<Location>, pms: Vec<PhysicalMachine>) -> Result<Self> {
        if pms.is_empty() {
            return Err(Error::Config("PM inventory is empty".into()));
        }
        for (i, loc) in locations.iter().enumerate() {
            if loc.id.0 as usize != i {
                return Err(Error::Config(format!(
                    "location ids must be dense, got {:?} at {i}",
                    loc.id
                )));
            }
        }
        for (i, pm) in pms.iter().enumerate() {
            if pm.id.index() != i {
                return Err(Error::Config(format!("PM ids must be dense, got {} at {i}", pm.id)));
            }
            if !pm.capacity.all_positive() {
                return Err(Error::Config(format!("{} has non-positive capacity", pm.id)));
            }
            if !(0.0 <= pm.power_idle && pm.power_idle <= pm.power_peak) {
                return Err(Error::Config(format!("{} needs 0 <= power_idle <= power_peak", pm.id)));
            }
            if pm.location.0 as usize >= locations.len() {
                return Err(Error::Config(format!(
                    "{} references unknown location {:?}",
                    pm.id, pm.location
                )));
            }
        }
        Ok(Self {
            locations,
            pms,
            vms: BTreeMap::new(),
        })
    }

    pub fn register_vm(&mut self, vm: VirtualMachine) -> Result<()> {
        if !vm.resources.all_positive() {
            return Err(Error::Config(format!("{} must have positive demands", vm.id)));
        }
        self.vms.insert(vm.id, vm);
        Ok(())
    }

    pub fn with_vms(mut self, vms: impl IntoIterator<Item = VirtualMachine>) -> Result<Self> {
        for vm in vms {
            self.register_vm(vm)?;
        }
        Ok(self)
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn pms(&self) -> &[PhysicalMachine] {
        &self.pms
    }

    pub fn pm(&self, id: PmId) -> Result<&PhysicalMachine> {
        self.pms.get(id.index()).ok_or(Error::UnknownPm(id))
    }

    pub fn vm(&self, id: VmId) -> Result<&VirtualMachine> {
        self.vms.get(&id).ok_or(Error::UnknownVm(id))
    }

    pub fn vms(&self) -> impl Iterator<Item = &VirtualMachine> {
        self.vms.values()
    }

    pub fn location_of(&self, pm: PmId) -> Result<&Location> {
        let pm = self.pm(pm)?;
        Ok(&self.locations[pm.location.0 as usize])
    }

    /// Size of a VM relative to the largest PM, bottleneck resource. Used to
    /// order VMs for decreasing-size heuristics.
    pub fn vm_size(&self, id: VmId) -> Result<f64> {
        let vm = self.vm(id)?;
        let largest = self.pms.iter().fold(Resources::ZERO, |acc, pm| Resources {
            cpu: acc.cpu.max(pm.capacity.cpu),
            ram_gb: acc.ram_gb.max(pm.capacity.ram_gb),
        });
        Ok(vm.resources.ratio_of(&largest))
    }
}

/// Allocation of VMs to PMs at one moment. A PM with no VMs is suspended.
///
/// VMs that have been booted but not yet placed are tracked as pending; they
/// draw no power.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudState {
    epoch: Timestamp,
    alloc: Vec<BTreeSet<VmId>>,
    placement: BTreeMap<VmId, PmId>,
    pending: BTreeSet<VmId>,
}

impl CloudState {
    /// All PMs empty and suspended.
    pub fn new(pm_count: usize, epoch: Timestamp) -> Self {
        Self {
            epoch,
            alloc: vec![BTreeSet::new(); pm_count],
            placement: BTreeMap::new(),
            pending: BTreeSet::new(),
        }
    }

    /// Convenience constructor from explicit `(vm, pm)` placements.
    pub fn with_placements(
        pm_count: usize,
        epoch: Timestamp,
        placements: impl IntoIterator<Item = (VmId, PmId)>,
    ) -> Result<Self> {
        let mut state = Self::new(pm_count, epoch);
        for (vm, pm) in placements {
            if state.contains(vm) {
                return Err(Error::Config(format!("{vm} placed twice")));
            }
            state.pending.insert(vm);
            state.place_in_place(vm, pm)?;
        }
        Ok(state)
    }

    pub fn epoch(&self) -> Timestamp {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: Timestamp) {
        self.epoch = epoch;
    }

    pub fn pm_count(&self) -> usize {
        self.alloc.len()
    }

    pub fn vms_on(&self, pm: PmId) -> Result<&BTreeSet<VmId>> {
        self.alloc.get(pm.index()).ok_or(Error::UnknownPm(pm))
    }

    pub fn host_of(&self, vm: VmId) -> Option<PmId> {
        self.placement.get(&vm).copied()
    }

    pub fn is_pending(&self, vm: VmId) -> bool {
        self.pending.contains(&vm)
    }

    pub fn contains(&self, vm: VmId) -> bool {
        self.placement.contains_key(&vm) || self.pending.contains(&vm)
    }

    pub fn is_suspended(&self, pm: PmId) -> Result<bool> {
        Ok(self.vms_on(pm)?.is_empty())
    }

    /// Suspension flag per PM, indexed by PM id.
    pub fn suspended(&self) -> Vec<bool> {
        self.alloc.iter().map(BTreeSet::is_empty).collect()
    }

    pub fn pending(&self) -> &BTreeSet<VmId> {
        &self.pending
    }

    pub fn placements(&self) -> &BTreeMap<VmId, PmId> {
        &self.placement
    }

    pub fn placed_count(&self) -> usize {
        self.placement.len()
    }

    /// Every VM known to the state, placed or pending, in id order.
    pub fn vm_ids(&self) -> Vec<VmId> {
        let mut ids: Vec<VmId> = self.placement.keys().chain(self.pending.iter()).copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Returns a new state with `action` applied; `self` is left unchanged.
    pub fn apply_action(&self, action: Action) -> Result<CloudState> {
        let mut next = self.clone();
        next.apply_in_place(action)?;
        Ok(next)
    }

    /// In-place variant of [`CloudState::apply_action`]. Returns whether a
    /// placed VM actually changed host.
    pub fn apply_in_place(&mut self, action: Action) -> Result<bool> {
        if action.pm.index() >= self.alloc.len() {
            return Err(Error::UnknownPm(action.pm));
        }
        match self.placement.get(&action.vm).copied() {
            Some(src) if src == action.pm => Ok(false),
            Some(src) => {
                self.alloc[src.index()].remove(&action.vm);
                self.alloc[action.pm.index()].insert(action.vm);
                self.placement.insert(action.vm, action.pm);
                Ok(true)
            }
            None if self.pending.contains(&action.vm) => {
                self.place_in_place(action.vm, action.pm)?;
                Ok(false)
            }
            None => Err(Error::UnknownVm(action.vm)),
        }
    }

    fn place_in_place(&mut self, vm: VmId, pm: PmId) -> Result<()> {
        if pm.index() >= self.alloc.len() {
            return Err(Error::UnknownPm(pm));
        }
        self.pending.remove(&vm);
        self.alloc[pm.index()].insert(vm);
        self.placement.insert(vm, pm);
        Ok(())
    }

    /// Registers a booted VM as pending placement.
    pub fn boot(&mut self, vm: VmId) -> Result<()> {
        if self.contains(vm) {
            return Err(Error::Config(format!("{vm} booted twice")));
        }
        self.pending.insert(vm);
        Ok(())
    }

    /// Removes a VM wherever it is. Deleting an unknown VM is an error.
    pub fn delete(&mut self, vm: VmId) -> Result<()> {
        if let Some(pm) = self.placement.remove(&vm) {
            self.alloc[pm.index()].remove(&vm);
            Ok(())
        } else if self.pending.remove(&vm) {
            Ok(())
        } else {
            Err(Error::UnknownVm(vm))
        }
    }

    /// Summed demand of the VMs on `pm`.
    pub fn load(&self, cloud: &Cloud, pm: PmId) -> Result<Resources> {
        let mut total = Resources::ZERO;
        for vm in self.vms_on(pm)? {
            total = total + cloud.vm(*vm)?.resources;
        }
        Ok(total)
    }

    /// Bottleneck utilisation of `pm`, clamped to 1 (overload is reported by
    /// [`CloudState::capacity_ok`]).
    pub fn utilisation(&self, cloud: &Cloud, pm: PmId) -> Result<f64> {
        let capacity = cloud.pm(pm)?.capacity;
        let load = self.load(cloud, pm)?;
        Ok(load.ratio_of(&capacity).min(1.0))
    }

    /// Whether the summed demand on `pm` stays within its capacity. Unknown
    /// PMs cannot host anything and report `false`.
    pub fn capacity_ok(&self, cloud: &Cloud, pm: PmId) -> bool {
        match (cloud.pm(pm), self.load(cloud, pm)) {
            (Ok(machine), Ok(load)) => load.fits_within(&machine.capacity),
            _ => false,
        }
    }
}

/// Planned control actions over a forecast window: at most one action per VM
/// per timestamp, stored sorted by VM id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    window: ForecastWindow,
    steps: Vec<Vec<Action>>,
}

impl Schedule {
    pub fn empty(window: ForecastWindow) -> Self {
        Self {
            steps: vec![Vec::new(); window.length],
            window,
        }
    }

    /// Builds a schedule from `(step offset, action)` pairs.
    pub fn from_actions(window: ForecastWindow, actions: impl IntoIterator<Item = (usize, Action)>) -> Result<Self> {
        let mut schedule = Self::empty(window);
        for (t, action) in actions {
            if t >= schedule.steps.len() {
                return Err(Error::TimeSeries(format!(
                    "action at offset {t} lies outside a window of length {}",
                    schedule.steps.len()
                )));
            }
            schedule.set(t, action);
        }
        Ok(schedule)
    }

    pub fn window(&self) -> &ForecastWindow {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.iter().all(Vec::is_empty)
    }

    pub fn action_count(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn step(&self, t: usize) -> &[Action] {
        &self.steps[t]
    }

    pub fn steps(&self) -> &[Vec<Action>] {
        &self.steps
    }

    /// `(step offset, action)` pairs in time order.
    pub fn actions(&self) -> impl Iterator<Item = (usize, Action)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .flat_map(|(t, step)| step.iter().map(move |a| (t, *a)))
    }

    pub fn action_for(&self, t: usize, vm: VmId) -> Option<Action> {
        let step = &self.steps[t];
        step.binary_search_by_key(&vm, |a| a.vm).ok().map(|i| step[i])
    }

    /// Inserts `action` at offset `t`, replacing any action for the same VM.
    pub fn set(&mut self, t: usize, action: Action) {
        let step = &mut self.steps[t];
        match step.binary_search_by_key(&action.vm, |a| a.vm) {
            Ok(i) => step[i] = action,
            Err(i) => step.insert(i, action),
        }
    }

    pub fn remove(&mut self, t: usize, vm: VmId) -> Option<Action> {
        let step = &mut self.steps[t];
        step.binary_search_by_key(&vm, |a| a.vm).ok().map(|i| step.remove(i))
    }

    /// Drops every action for which `keep` returns false.
    pub fn retain(&mut self, mut keep: impl FnMut(usize, &Action) -> bool) {
        for (t, step) in self.steps.iter_mut().enumerate() {
            step.retain(|a| keep(t, a));
        }
    }

    pub(crate) fn from_parts(window: ForecastWindow, steps: Vec<Vec<Action>>) -> Self {
        debug_assert_eq!(window.length, steps.len());
        Self { window, steps }
    }

    pub fn timestamp(&self, t: usize) -> Timestamp {
        self.window.timestamp(t)
    }

    pub fn to_time_series(&self) -> TimeSeries<Vec<Action>> {
        TimeSeries::new(self.window.start, self.window.step, self.steps.clone())
            .expect("forecast windows have a positive step")
    }
}
