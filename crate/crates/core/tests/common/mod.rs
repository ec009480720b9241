#![allow(dead_code)]

use chrono::{TimeZone, Utc};
use geosched::forecasting::ForecastWindow;
use geosched::geotraces::{GeoTrace, GeoTraceSet};
use geosched::model::{
    Cloud, CloudState, Location, LocationId, PhysicalMachine, PmId, Resources, VirtualMachine, VmId,
};
use geosched::rng::stream;
use geosched::timeseries::{hour, TimeSeries, Timestamp};
use rand::Rng;

pub fn start() -> Timestamp {
    Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap()
}

pub fn window(len: usize) -> ForecastWindow {
    ForecastWindow::new(start(), len, hour()).unwrap()
}

/// One location per PM; `prices[pm][t]`, constant 10 C.
pub fn traces(prices: &[Vec<f64>]) -> GeoTraceSet {
    GeoTraceSet::new(prices.iter().enumerate().map(|(i, p)| {
        GeoTrace::new(
            format!("l{i}"),
            TimeSeries::new(start(), hour(), p.clone()).unwrap(),
            TimeSeries::new(start(), hour(), vec![10.0; p.len()]).unwrap(),
        )
        .unwrap()
    }))
    .unwrap()
}

/// PMs with the given `(cpu, ram)` capacities, each at its own location.
pub fn cloud(pms: &[(u32, u32)], vms: &[(u32, u32)]) -> Cloud {
    let locations = (0..pms.len())
        .map(|i| Location {
            id: LocationId(i as u32),
            name: format!("l{i}"),
            price_trace_key: format!("l{i}"),
            temperature_trace_key: format!("l{i}"),
        })
        .collect();
    let machines = pms
        .iter()
        .enumerate()
        .map(|(i, &(cpu, ram))| PhysicalMachine {
            id: PmId(i as u32),
            capacity: Resources::new(cpu, ram),
            location: LocationId(i as u32),
            power_idle: 100.0,
            power_peak: 200.0,
        })
        .collect();
    Cloud::new(locations, machines)
        .unwrap()
        .with_vms(vms.iter().enumerate().map(|(i, &(cpu, ram))| VirtualMachine {
            id: VmId(i as u64),
            resources: Resources::new(cpu, ram),
        }))
        .unwrap()
}

pub struct Instance {
    pub cloud: Cloud,
    pub state: CloudState,
    pub traces: GeoTraceSet,
    pub window: ForecastWindow,
}

/// Random instance with up to `max_vms` VMs, `max_pms` PMs and a window of
/// up to `max_fw` steps. Some VMs may start pending.
pub fn random_instance(seed: u64, max_vms: usize, max_pms: usize, max_fw: usize) -> Instance {
    let mut rng = stream(seed, &[]);
    let n_vm = rng.random_range(1..=max_vms);
    let n_pm = rng.random_range(2..=max_pms);
    let fw = rng.random_range(1..=max_fw);
    let pms: Vec<(u32, u32)> = (0..n_pm)
        .map(|_| (rng.random_range(4..=8), rng.random_range(4..=8)))
        .collect();
    let vms: Vec<(u32, u32)> = (0..n_vm)
        .map(|_| (rng.random_range(1..=4), rng.random_range(1..=4)))
        .collect();
    let cloud = cloud(&pms, &vms);
    let mut state = CloudState::new(n_pm, start());
    for i in 0..n_vm {
        let vm = VmId(i as u64);
        state.boot(vm).unwrap();
        if rng.random_bool(0.7) {
            state
                .apply_in_place(geosched::model::Action::new(vm, PmId(rng.random_range(0..n_pm) as u32)))
                .unwrap();
        }
    }
    let prices: Vec<Vec<f64>> = (0..n_pm)
        .map(|_| (0..fw).map(|_| rng.random_range(0.05..0.2)).collect())
        .collect();
    Instance {
        cloud,
        state,
        traces: traces(&prices),
        window: window(fw),
    }
}

pub fn state(pm_count: usize, placed: &[(VmId, PmId)], pending: &[VmId]) -> CloudState {
    let mut s = CloudState::with_placements(pm_count, start(), placed.iter().copied()).unwrap();
    for vm in pending {
        s.boot(*vm).unwrap();
    }
    s
}
