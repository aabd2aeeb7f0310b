use wavetrack::analysis::{analyze_processed, compose_city, AnalysisConfig};
use wavetrack::ingest::{bin_weekly, parse_events, write_events_csv, FormatConfig, WeekWindow};
use wavetrack::partition::split;
use wavetrack::preprocess::pipeline;
use wavetrack::synth::{gen_event_stream, uniform_population, SynthConfig, WaveSpec};

fn city() -> SynthConfig {
    let mut cfg = SynthConfig::null(4, 312, 0.5, 0.1, 77);
    cfg.baseline = 1.0;
    cfg.waves.push(WaveSpec::stationary(52.0, 0.3, [0, 1], 312));
    cfg
}

#[test]
fn events_survive_a_csv_round_trip() {
    let cfg = city();
    let weights = uniform_population(cfg.bbox, 16, 16).unwrap();
    let partition = split(&weights, 4).unwrap();
    let (events, raws, _) = gen_event_stream(&cfg, &partition).unwrap();

    let mut buf = Vec::new();
    write_events_csv(&events, &mut buf).unwrap();
    let parsed = parse_events(buf.as_slice(), &FormatConfig::default()).unwrap();
    assert_eq!(parsed.len(), events.len());

    let window = WeekWindow::covering(&parsed, Some(cfg.start_date)).unwrap();
    let total = bin_weekly(&parsed, window).unwrap();
    for (week, &c) in total.counts.iter().enumerate() {
        let expected: u64 = raws.iter().map(|r| r.counts[week]).sum();
        assert_eq!(c, expected, "week {week}");
    }
}

#[test]
fn planted_annual_wave_found_from_counts() {
    let cfg = city();
    let weights = uniform_population(cfg.bbox, 16, 16).unwrap();
    let partition = split(&weights, 4).unwrap();
    let (_, raws, _) = gen_event_stream(&cfg, &partition).unwrap();

    let acfg = AnalysisConfig::default();
    let regions: Vec<_> = raws
        .iter()
        .map(|raw| {
            let ps = pipeline(raw).unwrap();
            analyze_processed(&ps, raw.region_id.unwrap(), &acfg).unwrap()
        })
        .collect();
    for r in &regions[..2] {
        let g = &r.global.grid;
        let (peak, _) = r
            .global
            .power
            .iter()
            .enumerate()
            .filter(|&(j, _)| g.fourier_periods[j] > 20.0)
            .fold((0, f64::MIN), |best, (j, &p)| if p > best.1 { (j, p) } else { best });
        let j52 = g.nearest_period(52.0);
        assert!(peak.abs_diff(j52) <= 1, "region {} peaks at {:.1} weeks", r.region_id, g.fourier_periods[peak]);
        assert!(r.global_mask.mask[j52]);
    }

    let city = compose_city(regions, &acfg).unwrap();
    let j52 = city.regions[0].global.grid.nearest_period(52.0);
    assert!(city.composed.counts[j52] >= 2);
    assert_eq!(city.composed.n_regions, 4);
}
