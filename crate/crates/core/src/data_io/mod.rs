//! CSV ingestion and export for consumption, supply, and tariff data, supply scaling,
//! and a synthetic dataset generator.
//!
//! File layouts (header row required, columns in this order, timestamps ISO-8601 UTC):
//!
//! * consumption: `timestamp,household_id,power_kw` at 5-minute resolution
//! * supply: `timestamp,fuel_type,generation_mw`, usually 30-minute rows
//! * tariff: `timestamp,price_gbp_per_kwh`

mod synth;

pub use synth::{synth_generate, SupplyCase, SynthSpec};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::amm::Tariff;
use crate::characterizer::ConsumptionSeries;
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, Timestamp};
use crate::types::HouseholdId;

/// Resolution every loaded series is resampled to.
pub const RESOLUTION_MIN: i64 = 5;
/// Longest consumption gap bridged by holding the last reading.
pub const CONSUMPTION_MAX_GAP_MIN: i64 = 30;
/// Longest supply gap bridged by holding the last reading.
pub const SUPPLY_MAX_GAP_MIN: i64 = 120;

const CONSUMPTION_HEADER: [&str; 3] = ["timestamp", "household_id", "power_kw"];
const SUPPLY_HEADER: [&str; 3] = ["timestamp", "fuel_type", "generation_mw"];
const TARIFF_HEADER: [&str; 2] = ["timestamp", "price_gbp_per_kwh"];

/// Total supply per period in kW, optionally broken down by fuel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplyProfile {
    pub grid: TimeGrid,
    pub total_kw: Vec<f64>,
    pub source_mix: Option<BTreeMap<String, Vec<f64>>>,
    pub case_label: Option<SupplyCase>,
}

impl SupplyProfile {
    pub fn new(grid: TimeGrid, total_kw: Vec<f64>) -> Result<Self> {
        if total_kw.len() != grid.len() {
            return Err(Error::invalid("supply profile", "value count does not match the grid"));
        }
        if total_kw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("supply profile", "supply must be finite and non-negative"));
        }
        Ok(SupplyProfile {
            grid,
            total_kw,
            source_mix: None,
            case_label: None,
        })
    }

    /// Values over `window`, which must lie on this profile's grid.
    pub fn slice(&self, window: &TimeGrid) -> Result<Vec<f64>> {
        slice_series(&self.grid, &self.total_kw, window, "supply")
    }
}

/// Values of `series` (on `grid`) over `window`.
pub fn slice_series(grid: &TimeGrid, series: &[f64], window: &TimeGrid, what: &str) -> Result<Vec<f64>> {
    if window.resolution_min() != grid.resolution_min() {
        return Err(Error::Coverage(format!("{what}: resolution differs from the requested window")));
    }
    let lo = grid.offset_floor(window.start());
    let hi = lo + window.len() as i64;
    if lo < 0 || hi > grid.len() as i64 || !window.start().is_aligned(grid.resolution_min()) {
        return Err(Error::Coverage(format!(
            "{what} covers {}..{} but {}..{} was requested",
            grid.start(),
            grid.end(),
            window.start(),
            window.end()
        )));
    }
    Ok(series[lo as usize..hi as usize].to_vec())
}

/// Divide every period by `upsilon`; the shape is unchanged.
pub fn scale_supply(profile: &SupplyProfile, upsilon: f64) -> Result<SupplyProfile> {
    if !(upsilon.is_finite() && upsilon > 0.0) {
        return Err(Error::invalid("upsilon", format!("must be positive, got {upsilon}")));
    }
    let scale = |v: &Vec<f64>| v.iter().map(|x| x / upsilon).collect::<Vec<f64>>();
    Ok(SupplyProfile {
        grid: profile.grid,
        total_kw: scale(&profile.total_kw),
        source_mix: profile
            .source_mix
            .as_ref()
            .map(|m| m.iter().map(|(k, v)| (k.clone(), scale(v))).collect()),
        case_label: profile.case_label,
    })
}

/// Loaded consumption plus the household-days blanked because a gap was too long to fill.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsumptionLoad {
    pub series: Vec<ConsumptionSeries>,
    pub dropped_days: Vec<(HouseholdId, NaiveDate)>,
}

fn open_reader(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let found: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            reason: format!("expected header {}, found {}", header.join(","), found.join(",")),
        });
    }
    Ok(reader)
}

fn parse_error(path: &Path, row: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        reason: reason.into(),
    }
}

/// Rows as (line number, fields), each row checked for the expected field count.
fn rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = open_reader(path, header)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, row, e.to_string())
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_error(path, row, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        out.push((row, rec));
    }
    Ok(out)
}

fn field_timestamp(path: &Path, row: usize, text: &str, resolution_min: i64) -> Result<Timestamp> {
    let ts = Timestamp::parse(text).map_err(|e| parse_error(path, row, e.to_string()))?;
    if !ts.is_aligned(resolution_min) {
        return Err(parse_error(path, row, format!("{ts} is not on a {resolution_min}-minute boundary")));
    }
    Ok(ts)
}

fn field_number(path: &Path, row: usize, text: &str, name: &str) -> Result<f64> {
    let v: f64 = text
        .parse()
        .map_err(|_| parse_error(path, row, format!("{name} {text:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(path, row, format!("{name} must be finite")));
    }
    Ok(v)
}

pub fn load_consumption_csv(path: impl AsRef<Path>) -> Result<Vec<ConsumptionSeries>> {
    Ok(load_consumption_detailed(path)?.series)
}

/// Load 5-minute household consumption. Every household is placed on the grid spanning
/// the earliest to the latest reading in the file. Gaps of up to 30 minutes hold the
/// previous reading (or the next one at the start); any day containing a longer gap is
/// zeroed and listed in `dropped_days`.
pub fn load_consumption_detailed(path: impl AsRef<Path>) -> Result<ConsumptionLoad> {
    let path = path.as_ref();
    let mut readings: BTreeMap<HouseholdId, BTreeMap<Timestamp, f64>> = BTreeMap::new();
    for (row, rec) in rows(path, &CONSUMPTION_HEADER)? {
        let ts = field_timestamp(path, row, &rec[0], RESOLUTION_MIN)?;
        let household = &rec[1];
        if household.is_empty() {
            return Err(parse_error(path, row, "household_id is empty"));
        }
        let p = field_number(path, row, &rec[2], "power_kw")?;
        if p < 0.0 {
            return Err(parse_error(path, row, format!("power_kw {p} is negative")));
        }
        let entry = readings.entry(HouseholdId::new(household)).or_default();
        if entry.insert(ts, p).is_some() {
            return Err(Error::Duplicate {
                path: path.to_path_buf(),
                household: household.to_string(),
                timestamp: ts,
            });
        }
    }
    let bounds = readings
        .values()
        .flat_map(|m| [m.keys().next(), m.keys().next_back()])
        .flatten()
        .fold(None, |acc: Option<(Timestamp, Timestamp)>, &ts| match acc {
            None => Some((ts, ts)),
            Some((lo, hi)) => Some((lo.min(ts), hi.max(ts))),
        });
    let Some((first, last)) = bounds else {
        return Ok(ConsumptionLoad {
            series: Vec::new(),
            dropped_days: Vec::new(),
        });
    };
    let grid = TimeGrid::new(first, last + RESOLUTION_MIN, RESOLUTION_MIN)?;
    let max_gap = (CONSUMPTION_MAX_GAP_MIN / RESOLUTION_MIN) as usize;
    let mut series = Vec::with_capacity(readings.len());
    let mut dropped_days = Vec::new();
    for (household, values) in readings {
        let mut raw: Vec<Option<f64>> = vec![None; grid.len()];
        for (ts, p) in values {
            raw[grid.offset_floor(ts) as usize] = Some(p);
        }
        let (filled, bad) = fill_gaps(&raw, max_gap);
        let mut power: Vec<f64> = filled.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        let mut days: Vec<NaiveDate> = bad.iter().map(|&i| grid.period_start(i).to_datetime().date_naive()).collect();
        days.dedup();
        for (t, ts) in grid.timestamps().enumerate() {
            if days.binary_search(&ts.to_datetime().date_naive()).is_ok() {
                power[t] = 0.0;
            }
        }
        dropped_days.extend(days.into_iter().map(|d| (household.clone(), d)));
        series.push(ConsumptionSeries::new(household, grid, power)?);
    }
    Ok(ConsumptionLoad { series, dropped_days })
}

/// Fill runs of missing values no longer than `max_gap` from the previous value (the next
/// one for a leading run). Returns the filled series and the indices left missing.
fn fill_gaps(raw: &[Option<f64>], max_gap: usize) -> (Vec<Option<f64>>, Vec<usize>) {
    let mut out = raw.to_vec();
    let mut missing = Vec::new();
    let mut t = 0;
    while t < raw.len() {
        if raw[t].is_some() {
            t += 1;
            continue;
        }
        let start = t;
        while t < raw.len() && raw[t].is_none() {
            t += 1;
        }
        let fill = if start > 0 { raw[start - 1] } else { raw.get(t).copied().flatten() };
        if t - start <= max_gap && fill.is_some() {
            for v in &mut out[start..t] {
                *v = fill;
            }
        } else {
            missing.extend(start..t);
        }
    }
    (out, missing)
}

/// Step between rows: the smallest spacing between distinct timestamps, or `default_min`
/// for a single row.
fn source_step(path: &Path, stamps: &[Timestamp], default_min: i64) -> Result<i64> {
    let step = stamps.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0).min().unwrap_or(default_min);
    if step % RESOLUTION_MIN != 0 {
        return Err(parse_error(path, 0, format!("row spacing of {step} minutes is not a multiple of {RESOLUTION_MIN}")));
    }
    Ok(step)
}

fn hold_to_resolution(values: &[f64], step_min: i64) -> Vec<f64> {
    let k = (step_min / RESOLUTION_MIN) as usize;
    values.iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect()
}

/// Load national generation by fuel, converting MW to kW and holding each row to 5-minute
/// periods. Missing rows for a fuel are held forward for up to two hours.
pub fn load_supply_csv(path: impl AsRef<Path>) -> Result<SupplyProfile> {
    let path = path.as_ref();
    let mut by_fuel: BTreeMap<String, BTreeMap<Timestamp, f64>> = BTreeMap::new();
    for (row, rec) in rows(path, &SUPPLY_HEADER)? {
        let ts = field_timestamp(path, row, &rec[0], RESOLUTION_MIN)?;
        let fuel = rec[1].to_string();
        if fuel.is_empty() {
            return Err(parse_error(path, row, "fuel_type is empty"));
        }
        let mw = field_number(path, row, &rec[2], "generation_mw")?;
        if mw < 0.0 {
            return Err(parse_error(path, row, format!("generation_mw {mw} is negative")));
        }
        if by_fuel.entry(fuel.clone()).or_default().insert(ts, mw).is_some() {
            return Err(Error::Duplicate {
                path: path.to_path_buf(),
                household: fuel,
                timestamp: ts,
            });
        }
    }
    let mut stamps: Vec<Timestamp> = by_fuel.values().flat_map(|m| m.keys().copied()).collect();
    stamps.sort();
    stamps.dedup();
    let (Some(&first), Some(&last)) = (stamps.first(), stamps.last()) else {
        return Err(Error::Coverage(format!("{}: no supply rows", path.display())));
    };
    let step = source_step(path, &stamps, 30)?;
    if (last - first) % step != 0 {
        return Err(parse_error(path, 0, "rows are not on a regular grid"));
    }
    let slots = ((last - first) / step + 1) as usize;
    let max_gap = (SUPPLY_MAX_GAP_MIN / step) as usize;
    let grid = TimeGrid::new(first, last + step, RESOLUTION_MIN)?;
    let mut mix = BTreeMap::new();
    let mut total = vec![0.0; grid.len()];
    for (fuel, values) in by_fuel {
        let mut raw = vec![None; slots];
        for (ts, mw) in values {
            if (ts - first) % step != 0 {
                return Err(parse_error(path, 0, format!("{fuel} row at {ts} is off the {step}-minute grid")));
            }
            raw[((ts - first) / step) as usize] = Some(mw * 1000.0);
        }
        let (filled, missing) = fill_gaps(&raw, max_gap);
        if let Some(&i) = missing.first() {
            return Err(Error::Coverage(format!(
                "{}: {fuel} has a gap longer than {SUPPLY_MAX_GAP_MIN} minutes at {}",
                path.display(),
                first + i as i64 * step
            )));
        }
        let kw: Vec<f64> = filled.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        let kw = hold_to_resolution(&kw, step);
        for (t, v) in kw.iter().enumerate() {
            total[t] += v;
        }
        mix.insert(fuel, kw);
    }
    Ok(SupplyProfile {
        grid,
        total_kw: total,
        source_mix: Some(mix),
        case_label: None,
    })
}

/// Load a unit-price series, holding each row until the next. Rows must be evenly spaced
/// with no gaps.
pub fn load_tariff_csv(path: impl AsRef<Path>) -> Result<Tariff> {
    let path = path.as_ref();
    let mut prices = BTreeMap::new();
    for (row, rec) in rows(path, &TARIFF_HEADER)? {
        let ts = field_timestamp(path, row, &rec[0], RESOLUTION_MIN)?;
        let p = field_number(path, row, &rec[1], "price_gbp_per_kwh")?;
        if prices.insert(ts, p).is_some() {
            return Err(parse_error(path, row, format!("duplicate timestamp {ts}")));
        }
    }
    let stamps: Vec<Timestamp> = prices.keys().copied().collect();
    let (Some(&first), Some(&last)) = (stamps.first(), stamps.last()) else {
        return Err(Error::Coverage(format!("{}: no tariff rows", path.display())));
    };
    let step = source_step(path, &stamps, 30)?;
    if let Some(w) = stamps.windows(2).find(|w| w[1] - w[0] != step) {
        return Err(Error::Coverage(format!("{}: tariff gap between {} and {}", path.display(), w[0], w[1])));
    }
    let grid = TimeGrid::new(first, last + step, RESOLUTION_MIN)?;
    let values: Vec<f64> = prices.into_values().collect();
    Tariff::new(grid, hold_to_resolution(&values, step))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_consumption_csv(path: impl AsRef<Path>, series: &[ConsumptionSeries]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(CONSUMPTION_HEADER)?;
    for s in series {
        for (ts, p) in s.grid.timestamps().zip(&s.power_kw) {
            w.write_record([ts.to_string(), s.household.to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write a supply profile at its 5-minute resolution, one row per fuel (or a single
/// `total` fuel when there is no breakdown), converting back to MW.
pub fn write_supply_csv(path: impl AsRef<Path>, profile: &SupplyProfile) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(SUPPLY_HEADER)?;
    let total = BTreeMap::from([("total".to_string(), profile.total_kw.clone())]);
    let mix = profile.source_mix.as_ref().unwrap_or(&total);
    for (t, ts) in profile.grid.timestamps().enumerate() {
        for (fuel, kw) in mix {
            w.write_record([ts.to_string(), fuel.clone(), (kw[t] / 1000.0).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_tariff_csv(path: impl AsRef<Path>, tariff: &Tariff) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(TARIFF_HEADER)?;
    for (ts, p) in tariff.grid.timestamps().zip(&tariff.price) {
        w.write_record([ts.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Paths of a dataset written by [`write_dataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub consumption: PathBuf,
    pub supply: PathBuf,
}

pub fn write_dataset(dir: impl AsRef<Path>, consumption: &[ConsumptionSeries], supply: &SupplyProfile) -> Result<DatasetPaths> {
    let dir = dir.as_ref();
    let paths = DatasetPaths {
        consumption: dir.join("consumption.csv"),
        supply: dir.join("supply.csv"),
    };
    write_consumption_csv(&paths.consumption, consumption)?;
    write_supply_csv(&paths.supply, supply)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn empty_consumption_file_gives_no_series() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "c.csv", "timestamp,household_id,power_kw\n");
        assert!(load_consumption_csv(p).unwrap().is_empty());
    }

    #[test]
    fn negative_power_is_a_parse_error_with_row() {
        let d = tempfile::tempdir().unwrap();
        let p = file(
            &d,
            "c.csv",
            "timestamp,household_id,power_kw\n2020-01-01T00:00:00Z,h1,0.5\n2020-01-01T00:05:00Z,h1,-1\n",
        );
        match load_consumption_csv(p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_consumption_row_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = file(
            &d,
            "c.csv",
            "timestamp,household_id,power_kw\n2020-01-01T00:00:00Z,h1,0.5\n2020-01-01T00:00:00Z,h1,0.6\n",
        );
        assert!(matches!(load_consumption_csv(p), Err(Error::Duplicate { .. })));
    }

    #[test]
    fn short_gaps_are_held_long_gaps_drop_the_day() {
        let d = tempfile::tempdir().unwrap();
        let mut body = String::from("timestamp,household_id,power_kw\n");
        let start = Timestamp::parse("2020-01-01T00:00:00Z").unwrap();
        for i in 0..(2 * 288) {
            let ts = start + i * 5;
            // 20-minute hole on day one, two-hour hole on day two
            if (10..14).contains(&i) || (300..324).contains(&i) {
                continue;
            }
            body.push_str(&format!("{ts},h1,{}\n", 0.5 + (i % 3) as f64));
        }
        let p = file(&d, "c.csv", &body);
        let load = load_consumption_detailed(p).unwrap();
        let s = &load.series[0];
        assert_eq!(s.power_kw.len(), 576);
        assert_eq!(s.power_kw[10], s.power_kw[9]);
        assert_eq!(s.power_kw[13], s.power_kw[9]);
        assert!(s.power_kw[288..].iter().all(|&p| p == 0.0));
        assert_eq!(load.dropped_days.len(), 1);
        assert_eq!(load.dropped_days[0].1, NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
    }

    #[test]
    fn one_day_of_half_hours_becomes_288_periods() {
        let d = tempfile::tempdir().unwrap();
        let mut body = String::from("timestamp,fuel_type,generation_mw\n");
        let start = Timestamp::parse("2020-01-01T00:00:00Z").unwrap();
        for i in 0..48 {
            body.push_str(&format!("{},wind,{}\n", start + i * 30, 1000 + i));
            body.push_str(&format!("{},gas,10000\n", start + i * 30));
        }
        let prof = load_supply_csv(file(&d, "s.csv", &body)).unwrap();
        assert_eq!(prof.total_kw.len(), 288);
        for slot in 0..48 {
            let six = &prof.total_kw[slot * 6..slot * 6 + 6];
            assert!(six.iter().all(|&v| v == (11000.0 + slot as f64) * 1000.0));
        }
    }

    #[test]
    fn supply_gap_rules() {
        let d = tempfile::tempdir().unwrap();
        let start = Timestamp::parse("2020-01-01T00:00:00Z").unwrap();
        let body = |skip: &[i64]| {
            let mut b = String::from("timestamp,fuel_type,generation_mw\n");
            for i in 0..48 {
                let v = if skip.contains(&i) { continue } else { 100 + i };
                b.push_str(&format!("{},wind,{v}\n", start + i * 30));
                b.push_str(&format!("{},gas,1\n", start + i * 30));
            }
            b
        };
        let prof = load_supply_csv(file(&d, "a.csv", &body(&[5]))).unwrap();
        assert_eq!(prof.total_kw[5 * 6], prof.total_kw[4 * 6]);
        let long: Vec<i64> = (10..15).collect();
        assert!(matches!(load_supply_csv(file(&d, "b.csv", &body(&long))), Err(Error::Coverage(_))));
    }

    #[test]
    fn tariff_loading() {
        let d = tempfile::tempdir().unwrap();
        let start = Timestamp::parse("2020-01-01T00:00:00Z").unwrap();
        let mut flat = String::from("timestamp,price_gbp_per_kwh\n");
        for i in 0..48 {
            flat.push_str(&format!("{},0.2084\n", start + i * 30));
        }
        let t = load_tariff_csv(file(&d, "t.csv", &flat)).unwrap();
        assert_eq!(t.price.len(), 288);
        assert!(t.price.iter().all(|&p| p == 0.2084));
        let empty = file(&d, "e.csv", "timestamp,price_gbp_per_kwh\n");
        assert!(load_tariff_csv(empty).is_err());
    }

    #[test]
    fn scaling() {
        let grid = TimeGrid::with_periods(Timestamp::from_hours(0), 3, 5).unwrap();
        let p = SupplyProfile::new(grid, vec![2.0, 4.0, 8.0]).unwrap();
        assert_eq!(scale_supply(&p, 1.0).unwrap(), p);
        assert_eq!(scale_supply(&p, 2.0).unwrap().total_kw, vec![1.0, 2.0, 4.0]);
        assert!(scale_supply(&p, 0.0).is_err());
    }

    #[test]
    fn consumption_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let grid = TimeGrid::with_periods(Timestamp::parse("2021-03-01T00:00:00Z").unwrap(), 5, 5).unwrap();
        let s = vec![
            ConsumptionSeries::new("a".into(), grid, vec![0.1, 0.2, 1.0 / 3.0, 2.5, 0.0]).unwrap(),
            ConsumptionSeries::new("b".into(), grid, vec![0.7; 5]).unwrap(),
        ];
        let p = d.path().join("c.csv");
        write_consumption_csv(&p, &s).unwrap();
        assert_eq!(load_consumption_csv(&p).unwrap(), s);
    }
}
