use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use wavetrack::analysis::{analyze_processed, compose_city, RegionAnalysis};
use wavetrack::ingest::{
    assign_regions, bin_weekly, parse_events, region_export, write_events_csv, EventSet, RawSeries, WeekWindow,
};
use wavetrack::partition::{parse_weights, region_sweep, split, PopulationWeights};
use wavetrack::preprocess::pipeline;
use wavetrack::significance::ThresholdReport;
use wavetrack::synth::{gen_city, gen_event_stream, uniform_population, write_series_csv, Emit, SynthConfig};
use wavetrack::waves::write_runs_csv;

use crate::config::{Loaded, RunConfig};
use crate::error::CliError;
use crate::output::{sha256_hex, OutputDir};

/// Cells per axis of the uniform population grid behind synthetic cities.
const SYNTH_POP_CELLS: usize = 64;

pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Analysis(e.into()))
}

fn load_events(run: &Loaded, log: &Log) -> Result<EventSet, CliError> {
    let events = parse_events(open(run.events()?)?, &run.config.format())?;
    log.info(format!(
        "read {} events ({} rejected, {} filtered)",
        events.len(),
        events.rejected,
        events.filtered
    ));
    Ok(events)
}

fn load_weights(run: &Loaded) -> Result<PopulationWeights, CliError> {
    Ok(parse_weights(open(run.weights()?)?)?)
}

/// Hash of the effective config, independent of the output location.
fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.out = None;
    sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

fn input_hashes(run: &Loaded) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (name, path) in [("events", &run.events), ("weights", &run.weights)] {
        if let Some(p) = path {
            let bytes = std::fs::read(p).map_err(|e| CliError::Analysis(e.into()))?;
            map.insert(name.to_string(), sha256_hex(&bytes));
        }
    }
    Ok(map)
}

/// Runs `body` against a fresh output directory and removes what it wrote
/// if it fails.
pub fn with_output<F>(root: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut OutputDir) -> Result<(), CliError>,
{
    let mut out = OutputDir::create(root)?;
    match body(&mut out) {
        Ok(()) => Ok(()),
        Err(e) => {
            out.rollback();
            Err(e)
        }
    }
}

fn finish(out: &mut OutputDir, command: &str, run: &Loaded) -> Result<(), CliError> {
    let inputs = input_hashes(run)?;
    out.finish(command, config_hash(&run.config), inputs)
}

#[derive(Serialize)]
struct RegionThresholds<'a> {
    region_id: usize,
    offset: usize,
    report: &'a ThresholdReport,
}

fn thresholds_json(regions: &[RegionAnalysis]) -> Vec<RegionThresholds<'_>> {
    regions
        .iter()
        .map(|r| RegionThresholds {
            region_id: r.region_id,
            offset: r.offset,
            report: &r.report,
        })
        .collect()
}

fn write_global_rows<W: Write>(w: &mut csv::Writer<W>, r: &RegionAnalysis, with_id: bool) -> wavetrack::Result<()> {
    let g = &r.global;
    for j in 0..g.power.len() {
        let mut row = Vec::with_capacity(6);
        if with_id {
            row.push(r.region_id.to_string());
        }
        row.extend([
            g.grid.fourier_periods[j].to_string(),
            g.power[j].to_string(),
            r.global_mask.threshold[j].to_string(),
            g.n_avg[j].to_string(),
            r.global_mask.mask[j].to_string(),
        ]);
        w.write_record(&row)?;
    }
    Ok(())
}

pub fn analyze(run: &Loaded, log: &Log) -> Result<(), CliError> {
    let cfg = &run.config;
    let acfg = cfg.analysis_config();
    let events = load_events(run, log)?;
    let weights = load_weights(run)?;

    let sweep = region_sweep(&events, &weights, cfg.analysis.phi, &cfg.analysis.r_values)?;
    log.info(format!("region sweep picked r = {}", sweep.r_u));
    let partition = split(&weights, sweep.r_u)?;
    let window = WeekWindow::covering(&events, cfg.inputs.epoch)?;
    let assignment = assign_regions(&events, &partition);
    if !assignment.outside.is_empty() {
        log.info(format!("{} events fall outside every region", assignment.outside.len()));
    }

    let mut raws = Vec::new();
    for (&id, set) in &assignment.regions {
        let mut s = bin_weekly(set, window)?;
        s.region_id = Some(id);
        if s.mean_rate() >= cfg.analysis.phi {
            raws.push(s);
        }
    }
    log.info(format!(
        "{} of {} regions reach {} events per week",
        raws.len(),
        partition.r(),
        cfg.analysis.phi
    ));
    let processed = raws
        .par_iter()
        .map(|raw: &RawSeries| pipeline(raw))
        .collect::<wavetrack::Result<Vec<_>>>()?;
    let regions = processed
        .par_iter()
        .map(|ps| analyze_processed(ps, ps.region_id.expect("region id set"), &acfg))
        .collect::<wavetrack::Result<Vec<_>>>()?;
    let city = compose_city(regions, &acfg)?;

    with_output(&run.out, |out| {
        out.write_json("partition.json", &partition)?;
        out.write_json("sweep.json", &sweep)?;
        out.write_json("regions.json", &region_export(&assignment, &partition))?;
        for ps in &processed {
            let id = ps.region_id.expect("region id set");
            out.write_with(&format!("series/region_{id}.csv"), |b| ps.write_csv(b))?;
        }
        out.write_with("global_spectra.csv", |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["region_id", "period_weeks", "power", "threshold", "n_avg", "significant"])?;
            for r in &city.regions {
                write_global_rows(&mut w, r, true)?;
            }
            w.flush()?;
            Ok(())
        })?;
        out.write_with("composed_spectrum.csv", |b| city.composed.write_csv(b))?;
        for (i, summary) in city.bands.iter().enumerate() {
            let band = summary.composed.band;
            out.write_with(&format!("composed_band_{band}.csv"), |b| summary.composed.write_csv(b))?;
            let (runs, fits) = if i == 0 {
                ("runs.csv".to_string(), "fits.json".to_string())
            } else {
                (format!("runs_{band}.csv"), format!("fits_{band}.json"))
            };
            out.write_with(&runs, |b| write_runs_csv(&summary.survey.runs, b))?;
            out.write_json(&fits, &summary.survey)?;
        }
        out.write_json("thresholds.json", &thresholds_json(&city.regions))?;
        finish(out, "analyze", run)
    })?;
    log.info(format!("wrote {}", run.out.display()));
    Ok(())
}

pub fn citylevel(run: &Loaded, log: &Log) -> Result<(), CliError> {
    let cfg = &run.config;
    let acfg = cfg.analysis_config();
    let events = load_events(run, log)?;
    let window = WeekWindow::covering(&events, cfg.inputs.epoch)?;
    let raw = bin_weekly(&events, window)?;
    let ps = pipeline(&raw)?;
    let r = analyze_processed(&ps, 0, &acfg)?;

    with_output(&run.out, |out| {
        out.write_with("series.csv", |b| ps.write_csv(b))?;
        out.write_with("global_spectrum.csv", |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["period_weeks", "power", "threshold", "n_avg", "significant"])?;
            write_global_rows(&mut w, &r, false)?;
            w.flush()?;
            Ok(())
        })?;
        for band in &r.bands {
            let p = &band.power;
            out.write_with(&format!("band_{}.csv", p.band), |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["week", "power", "threshold", "coi_valid", "significant"])?;
                for t in 0..p.power.len() {
                    w.write_record([
                        (p.offset + t).to_string(),
                        p.power[t].to_string(),
                        band.mask.threshold[0].to_string(),
                        p.coi_valid[t].to_string(),
                        band.mask.mask[t].to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
        }
        out.write_json("thresholds.json", &thresholds_json(std::slice::from_ref(&r)))?;
        finish(out, "citylevel", run)
    })?;
    log.info(format!("wrote {}", run.out.display()));
    Ok(())
}

pub fn partition(run: &Loaded, log: &Log) -> Result<(), CliError> {
    let cfg = &run.config;
    let weights = load_weights(run)?;
    let events = match run.events {
        Some(_) => Some(load_events(run, log)?),
        None => None,
    };
    let (r, sweep) = match &events {
        Some(ev) => {
            let s = region_sweep(ev, &weights, cfg.analysis.phi, &cfg.analysis.r_values)?;
            (s.r_u, Some(s))
        }
        None => match cfg.analysis.r_values.as_slice() {
            [r] => (*r, None),
            _ => {
                return Err(CliError::field(
                    "analysis.r_values",
                    "without events exactly one region count is needed",
                ))
            }
        },
    };
    let partition = split(&weights, r)?;
    log.info(format!("split into {r} regions, imbalance {:.4}", partition.imbalance()));
    with_output(&run.out, |out| {
        out.write_json("partition.json", &partition)?;
        if let (Some(ev), Some(s)) = (&events, &sweep) {
            out.write_json("sweep.json", s)?;
            out.write_json("regions.json", &region_export(&assign_regions(ev, &partition), &partition))?;
        }
        finish(out, "partition", run)
    })
}

fn write_weights_csv<W: Write>(weights: &PopulationWeights, out: W) -> wavetrack::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lat", "lon", "weight"])?;
    for p in weights.points() {
        w.write_record([p.lat.to_string(), p.lon.to_string(), p.weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn synth(config: &Path, out_dir: Option<&Path>, seed: Option<u64>, log: &Log) -> Result<(), CliError> {
    let mut cfg: SynthConfig = crate::config::read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Config {
        field: None,
        message: e.to_string(),
    })?;
    let out_dir = out_dir.ok_or_else(|| CliError::field("--out", "synth needs an output directory"))?;
    if cfg.emit == Emit::Events && !cfg.n_regions.is_power_of_two() {
        return Err(CliError::field("n_regions", "event emission needs a power-of-two region count"));
    }
    if cfg.emit == Emit::Events && cfg.n_regions > SYNTH_POP_CELLS * SYNTH_POP_CELLS {
        return Err(CliError::field("n_regions", "too many regions for the population grid"));
    }

    let (series, truth) = gen_city(&cfg)?;
    let config_sha = sha256_hex(&serde_json::to_vec(&cfg).expect("config serializes"));
    with_output(out_dir, |out| {
        out.write_with("series.csv", |b| write_series_csv(&series, b))?;
        out.write_json("ground_truth.json", &truth)?;
        if cfg.emit == Emit::Events {
            let weights = uniform_population(cfg.bbox, SYNTH_POP_CELLS, SYNTH_POP_CELLS)?;
            let partition = split(&weights, cfg.n_regions)?;
            let (events, _, _) = gen_event_stream(&cfg, &partition)?;
            log.info(format!("generated {} events", events.len()));
            out.write_with("events.csv", |b| write_events_csv(&events, b))?;
            out.write_with("weights.csv", |b| write_weights_csv(&weights, b))?;
            out.write_json("partition.json", &partition)?;
        }
        out.finish("synth", config_sha, BTreeMap::new())
    })?;
    log.info(format!("wrote {}", out_dir.display()));
    Ok(())
}
