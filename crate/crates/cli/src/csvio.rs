//! CSV formats: event streams, phase records, scan curves and optima.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::{self, Write};
use std::path::Path;

use rrdps_core::scanner::{CurvePoint, Optimum, ScanPoint};
use rrdps_core::{DetectionEvent, Detector, PhaseBits};

use crate::error::CliError;

pub const EVENTS_HEADER: &str = "block,slot,detector";
pub const PHASES_HEADER: &str = "block,phases";
pub const CURVE_HEADER: &str = "distance_km,L,trial,N_em,N,e_b,v_th,e_src,e_p,K,key_rate_per_pulse";
pub const SUMMARY_HEADER: &str = "distance_km,L,trials,mean_key_rate,std_key_rate,stderr_key_rate";
pub const OPTIMA_HEADER: &str = "distance_km,mu,optimal_L,v_th,e_b,e_ph";

pub fn write_events(w: &mut dyn Write, events: &[DetectionEvent]) -> io::Result<()> {
    writeln!(w, "{EVENTS_HEADER}")?;
    for e in events {
        writeln!(w, "{},{},{}", e.block_id, e.slot, e.detector)?;
    }
    Ok(())
}

fn reader(path: &Path, header: &str) -> Result<csv::Reader<std::fs::File>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::parse(path, 0, e.to_string()))?;
    let found = rdr
        .headers()
        .map_err(|e| CliError::parse(path, 1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != header {
        return Err(CliError::parse(
            path,
            1,
            format!("expected header `{header}`, found `{found}`"),
        ));
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T, CliError>
where
    T::Err: Display,
{
    let raw = record.get(idx).unwrap_or_default();
    raw.parse()
        .map_err(|e| CliError::parse(path, line, format!("bad {name} {raw:?}: {e}")))
}

/// Reads and checks an event stream: slots below `block_size`, blocks
/// below `blocks_emitted`, rows sorted by `(block, slot, detector)`.
pub fn read_events(
    path: &Path,
    block_size: usize,
    blocks_emitted: u64,
) -> Result<Vec<DetectionEvent>, CliError> {
    let mut rdr = reader(path, EVENTS_HEADER)?;
    let mut events: Vec<DetectionEvent> = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(CliError::parse(
                path,
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let block: u64 = field(path, line, &record, 0, "block")?;
        let slot: u32 = field(path, line, &record, 1, "slot")?;
        let detector: Detector = field(path, line, &record, 2, "detector")?;
        if slot as usize >= block_size {
            return Err(CliError::parse(
                path,
                line,
                format!("slot {slot} not below L = {block_size}"),
            ));
        }
        if block >= blocks_emitted {
            return Err(CliError::parse(
                path,
                line,
                format!("block {block} not below the {blocks_emitted} emitted blocks"),
            ));
        }
        let event = DetectionEvent::new(block, slot, detector);
        if events.last().is_some_and(|prev| *prev >= event) {
            return Err(CliError::parse(
                path,
                line,
                "rows must be sorted by (block, slot) without duplicates",
            ));
        }
        events.push(event);
    }
    Ok(events)
}

/// Reads Alice's record, one `0`/`1` string of length `block_size` per block.
pub fn read_phases(path: &Path, block_size: usize) -> Result<BTreeMap<u64, PhaseBits>, CliError> {
    let mut rdr = reader(path, PHASES_HEADER)?;
    let mut phases = BTreeMap::new();
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let block: u64 = field(path, line, &record, 0, "block")?;
        let bits: PhaseBits = field(path, line, &record, 1, "phases")?;
        if bits.len() != block_size {
            return Err(CliError::parse(
                path,
                line,
                format!("{} phases, expected L = {block_size}", bits.len()),
            ));
        }
        if phases.insert(block, bits).is_some() {
            return Err(CliError::parse(
                path,
                line,
                format!("duplicate block {block}"),
            ));
        }
    }
    Ok(phases)
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn write_curve(w: &mut dyn Write, points: &[ScanPoint]) -> io::Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for p in points {
        let r = p.report.as_ref();
        let e_b = (p.tally.blocks_sifted > 0).then(|| p.tally.bit_error_rate());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.distance_km,
            p.block_size,
            p.trial,
            p.tally.blocks_emitted,
            p.tally.blocks_sifted,
            opt(e_b),
            opt(r.map(|r| r.photon_threshold)),
            opt(r.map(|r| r.e_src)),
            opt(r.map(|r| r.phase_error)),
            opt(r.map(|r| r.key_length)),
            opt(r.map(|r| r.key_rate_per_pulse)),
        )?;
    }
    Ok(())
}

pub fn write_summary(w: &mut dyn Write, curve: &[CurvePoint]) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for c in curve {
        let has = c.trials > 0;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.distance_km,
            c.block_size,
            c.trials,
            opt(has.then_some(c.mean_key_rate)),
            opt(has.then_some(c.std_key_rate)),
            opt(has.then_some(c.stderr_key_rate)),
        )?;
    }
    Ok(())
}

pub fn write_optima(w: &mut dyn Write, optima: &[Optimum]) -> io::Result<()> {
    writeln!(w, "{OPTIMA_HEADER}")?;
    for o in optima {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            o.distance_km, o.mu, o.block_size, o.v_th, o.bit_error, o.phase_error
        )?;
    }
    Ok(())
}
