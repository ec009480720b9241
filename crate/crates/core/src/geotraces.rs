//! Per-location electricity price and temperature traces, and the
//! temperature-dependent cooling overhead (pPUE) model.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use chrono::TimeDelta;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::timeseries::{TimeSeries, Timestamp};

pub const CSV_HEADER: [&str; 4] = ["timestamp", "location", "price_usd_per_kwh", "temperature_c"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTrace {
    pub location: String,
    /// USD per kWh.
    pub prices: TimeSeries<f64>,
    /// Degrees Celsius.
    pub temperatures: TimeSeries<f64>,
}

impl GeoTrace {
    pub fn new(location: impl Into<String>, prices: TimeSeries<f64>, temperatures: TimeSeries<f64>) -> Result<Self> {
        let location = location.into();
        if !prices.same_index(&temperatures) {
            return Err(Error::TimeSeries(format!(
                "price and temperature series for `{location}` have different indices"
            )));
        }
        if let Some(p) = prices.values().iter().find(|p| !(**p >= 0.0)) {
            return Err(Error::TimeSeries(format!("negative price {p} for `{location}`")));
        }
        Ok(Self {
            location,
            prices,
            temperatures,
        })
    }

    pub fn price_at(&self, t: Timestamp) -> Result<f64> {
        self.prices.get(t).copied().ok_or_else(|| self.gap(t))
    }

    pub fn temperature_at(&self, t: Timestamp) -> Result<f64> {
        self.temperatures.get(t).copied().ok_or_else(|| self.gap(t))
    }

    fn gap(&self, t: Timestamp) -> Error {
        Error::TraceGap {
            location: self.location.clone(),
            timestamp: t,
        }
    }

    /// The trace restricted to `len` steps from `from`.
    pub fn slice(&self, from: Timestamp, len: usize) -> Result<GeoTrace> {
        let prices = self.prices.slice(from, len).ok_or_else(|| self.gap(from))?;
        let temperatures = self.temperatures.slice(from, len).ok_or_else(|| self.gap(from))?;
        Ok(GeoTrace {
            location: self.location.clone(),
            prices,
            temperatures,
        })
    }
}

/// Traces keyed by location name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoTraceSet {
    traces: BTreeMap<String, GeoTrace>,
}

impl GeoTraceSet {
    pub fn new(traces: impl IntoIterator<Item = GeoTrace>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut reference: Option<(Timestamp, TimeDelta, usize)> = None;
        for trace in traces {
            let idx = (trace.prices.start(), trace.prices.step(), trace.prices.len());
            match reference {
                None => reference = Some(idx),
                Some(r) if r != idx => {
                    return Err(Error::TimeSeries(format!(
                        "trace `{}` does not share the common index",
                        trace.location
                    )))
                }
                _ => {}
            }
            if map.insert(trace.location.clone(), trace).is_some() {
                return Err(Error::TimeSeries("duplicate location in trace set".into()));
            }
        }
        Ok(Self { traces: map })
    }

    pub fn get(&self, key: &str) -> Result<&GeoTrace> {
        self.traces
            .get(key)
            .ok_or_else(|| Error::UnknownLocation(key.to_string()))
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GeoTrace> {
        self.traces.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut GeoTrace> {
        self.traces.values_mut()
    }

    pub fn locations(&self) -> impl Iterator<Item = &str> {
        self.traces.keys().map(String::as_str)
    }

    /// Shared index start/step/len, if the set is non-empty.
    pub fn index(&self) -> Option<(Timestamp, TimeDelta, usize)> {
        self.traces
            .values()
            .next()
            .map(|t| (t.prices.start(), t.prices.step(), t.prices.len()))
    }

    pub fn slice(&self, from: Timestamp, len: usize) -> Result<GeoTraceSet> {
        let traces = self
            .traces
            .values()
            .map(|t| t.slice(from, len).map(|s| (s.location.clone(), s)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(GeoTraceSet { traces })
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct TraceRow {
    timestamp: String,
    location: String,
    price_usd_per_kwh: f64,
    temperature_c: f64,
}

/// Reads a trace CSV (`timestamp,location,price_usd_per_kwh,temperature_c`).
pub fn load_traces(path: impl AsRef<Path>) -> Result<GeoTraceSet> {
    let file = std::fs::File::open(path)?;
    read_traces(file)
}

pub fn read_traces<R: Read>(reader: R) -> Result<GeoTraceSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for column in CSV_HEADER {
        if !headers.iter().any(|h| h == column) {
            return Err(Error::MissingColumn(column.to_string()));
        }
    }

    let mut columns: BTreeMap<String, (Vec<Timestamp>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::TraceFormat {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: TraceRow = record.deserialize(Some(&headers)).map_err(|e| Error::TraceFormat {
            line,
            message: e.to_string(),
        })?;
        let timestamp = chrono::DateTime::parse_from_rfc3339(&row.timestamp)
            .map_err(|e| Error::TraceFormat {
                line,
                message: format!("bad timestamp `{}`: {e}", row.timestamp),
            })?
            .to_utc();
        if row.location.is_empty() {
            return Err(Error::TraceFormat {
                line,
                message: "empty location".into(),
            });
        }
        if !(row.price_usd_per_kwh >= 0.0) {
            return Err(Error::NegativePrice {
                location: row.location,
                price: row.price_usd_per_kwh,
                line,
            });
        }
        if !row.temperature_c.is_finite() {
            return Err(Error::TraceFormat {
                line,
                message: "temperature is not finite".into(),
            });
        }
        let entry = columns.entry(row.location.clone()).or_default();
        if let Some(&last) = entry.0.last() {
            if timestamp <= last {
                return Err(Error::NonMonotone {
                    location: row.location,
                    timestamp,
                    line,
                });
            }
        }
        entry.0.push(timestamp);
        entry.1.push(row.price_usd_per_kwh);
        entry.2.push(row.temperature_c);
    }

    let traces = columns
        .into_iter()
        .map(|(location, (index, prices, temps))| {
            let p = TimeSeries::from_index(index.clone(), prices)?;
            let t = TimeSeries::from_index(index, temps)?;
            GeoTrace::new(location, p, t)
        })
        .collect::<Result<Vec<_>>>()?;
    GeoTraceSet::new(traces)
}

/// Writes traces in timestamp-major order, one row per (timestamp, location).
pub fn write_traces<W: Write>(traces: &GeoTraceSet, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    if let Some((_, _, len)) = traces.index() {
        for i in 0..len {
            for trace in traces.iter() {
                let ts = trace.prices.timestamp(i);
                wtr.serialize(TraceRow {
                    timestamp: ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                    location: trace.location.clone(),
                    price_usd_per_kwh: trace.prices.values()[i],
                    temperature_c: trace.temperatures.values()[i],
                })?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_traces(traces: &GeoTraceSet, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_traces(traces, std::io::BufWriter::new(file))
}

/// Knobs for synthetic traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// Mean price, USD/kWh.
    pub base_price: f64,
    /// Amplitude of the daily price sinusoid.
    pub price_amplitude: f64,
    /// Innovation std-dev of the AR(1) price noise.
    pub noise_sigma: f64,
    pub ar_coefficient: f64,
    /// Mean temperature across locations, degrees C.
    pub temperature_mean: f64,
    pub temperature_amplitude: f64,
    /// Spread of per-location seasonal temperature offsets.
    pub seasonal_spread: f64,
    /// Per-location phase offsets (radians). Defaults to an even spread over
    /// the daily cycle, which anti-correlates two locations.
    pub phase_offsets: Option<Vec<f64>>,
    pub period_hours: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            base_price: 0.10,
            price_amplitude: 0.04,
            noise_sigma: 0.005,
            ar_coefficient: 0.8,
            temperature_mean: 12.0,
            temperature_amplitude: 6.0,
            seasonal_spread: 16.0,
            phase_offsets: None,
            period_hours: 24.0,
        }
    }
}

/// Deterministic synthetic traces for `locations`, `horizon` steps from
/// `start`.
pub fn synthesize_traces(
    seed: u64,
    locations: &[String],
    start: Timestamp,
    step: TimeDelta,
    horizon: usize,
    params: &SynthParams,
) -> Result<GeoTraceSet> {
    let n = locations.len();
    if n < 1 {
        return Err(Error::Config("at least one location is required".into()));
    }
    if horizon < 1 {
        return Err(Error::Config("horizon must be at least one step".into()));
    }
    let phases: Vec<f64> = match &params.phase_offsets {
        Some(p) if p.len() == n => p.clone(),
        Some(p) => {
            return Err(Error::Config(format!(
                "{} phase offsets given for {n} locations",
                p.len()
            )))
        }
        None => (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect(),
    };
    let noise =
        Normal::new(0.0, params.noise_sigma.max(0.0)).map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    let step_hours = step.num_seconds() as f64 / 3600.0;
    let omega = 2.0 * PI / params.period_hours;

    let mut traces = Vec::with_capacity(n);
    for (i, name) in locations.iter().enumerate() {
        let mut rng = stream(seed, &[0x7472_6163, i as u64]);
        let seasonal = if n > 1 {
            params.seasonal_spread * (i as f64 / (n - 1) as f64 - 0.5)
        } else {
            0.0
        };
        // Temperature peaks mid-afternoon local time; reuse the price phase
        // so warmer hours line up with the daily price peak.
        let temp_phase = phases[i] + rng.random_range(-0.3..0.3);
        let mut ar = 0.0;
        let mut prices = Vec::with_capacity(horizon);
        let mut temps = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let hours = k as f64 * step_hours;
            if params.noise_sigma > 0.0 {
                ar = params.ar_coefficient * ar + noise.sample(&mut rng);
            }
            let price = params.base_price + params.price_amplitude * (omega * hours + phases[i]).sin() + ar;
            prices.push(price.max(0.0));
            let temp =
                params.temperature_mean + seasonal + params.temperature_amplitude * (omega * hours + temp_phase).sin();
            temps.push(temp);
        }
        traces.push(GeoTrace::new(
            name.clone(),
            TimeSeries::new(start, step, prices)?,
            TimeSeries::new(start, step, temps)?,
        )?);
    }
    GeoTraceSet::new(traces)
}

/// Piecewise-linear pPUE as a function of outside temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PPueModel {
    /// `(temperature C, pPUE)` points, sorted by temperature.
    pub anchors: Vec<(f64, f64)>,
    /// pPUE once only mechanical chillers run.
    pub mechanical_ceiling: f64,
}

impl Default for PPueModel {
    /// Outside-air cooling at -3.9 C (1.05), mixed cooling at 15.6 C (1.17),
    /// mechanical chillers only from 25 C (1.30).
    fn default() -> Self {
        Self {
            anchors: vec![(-3.9, 1.05), (15.6, 1.17), (25.0, 1.30)],
            mechanical_ceiling: 1.30,
        }
    }
}

impl PPueModel {
    pub fn new(anchors: Vec<(f64, f64)>, mechanical_ceiling: f64) -> Result<Self> {
        let model = Self {
            anchors,
            mechanical_ceiling,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchors.is_empty() {
            return Err(Error::Config("pPUE model needs at least one anchor".into()));
        }
        for pair in self.anchors.windows(2) {
            if !(pair[0].0 < pair[1].0) {
                return Err(Error::Config("pPUE anchors must be sorted by temperature".into()));
            }
            if pair[1].1 < pair[0].1 {
                return Err(Error::Config("pPUE must be non-decreasing in temperature".into()));
            }
        }
        if self.anchors.iter().any(|&(_, p)| p < 1.0) {
            return Err(Error::Config("pPUE values must be at least 1.0".into()));
        }
        let last = self.anchors[self.anchors.len() - 1].1;
        if self.mechanical_ceiling < last {
            return Err(Error::Config("mechanical ceiling below the last anchor".into()));
        }
        Ok(())
    }

    /// Cooling overhead factor at `temperature` (degrees C).
    pub fn ppue(&self, temperature: f64) -> f64 {
        let anchors = &self.anchors;
        let (t0, p0) = anchors[0];
        if temperature <= t0 {
            return p0;
        }
        let (tn, _) = anchors[anchors.len() - 1];
        if temperature >= tn {
            return self.mechanical_ceiling;
        }
        for pair in anchors.windows(2) {
            let ((ta, pa), (tb, pb)) = (pair[0], pair[1]);
            if temperature <= tb {
                let w = (temperature - ta) / (tb - ta);
                return pa + w * (pb - pa);
            }
        }
        self.mechanical_ceiling
    }
}

/// Pearson correlation coefficient; `None` when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va.sqrt() * vb.sqrt()))
}
