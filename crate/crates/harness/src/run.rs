//! Scenario execution.
//!
//! Every (snr, seed) pair draws one set of sources, received signals and
//! reference samples that all modes share, and every mode starts its chains
//! from the same generator, so modes are compared on common random numbers.
//! Cells run in parallel; rows are ordered by SNR, seed and the configured
//! mode order.

use std::time::Instant;

use addps_core::channel::ChannelConfig;
use addps_core::guidance::GuidanceTrace;
use addps_core::metrics::{frechet_distance, mse_psnr, sliced_wasserstein, w2_gaussian, SampleSet};
use addps_core::numerics::SeededRng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Metric};
use crate::models::{build_link, build_schedule, build_score, Models, Source};
use crate::receivers::{CellContext, ReceiverRegistry};
use crate::report::ReportRow;
use crate::HarnessError;

const SOURCE_STREAM: u64 = 0x50_0000;
const NOISE_STREAM: u64 = 0x50_0001;
const REFERENCE_STREAM: u64 = 0x50_0002;
const RECEIVER_STREAM: u64 = 0x50_0003;
const PROJECTION_STREAM: u64 = 0x50_0004;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Fill `wall_ms`; timed reports are not reproducible.
    pub timing: bool,
    /// Keep the guidance trace of chain 0 in every guided cell.
    pub traces: bool,
}

/// Guidance trace of chain 0 of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTrace {
    pub mode: String,
    pub snr_db: f64,
    pub seed: u64,
    pub trace: GuidanceTrace,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    pub traces: Vec<CellTrace>,
}

/// Runs a scenario with the built-in receivers and no timing.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>, HarnessError> {
    Ok(run_scenario_with(
        cfg,
        &ReceiverRegistry::with_builtins(),
        RunOptions::default(),
    )?
    .rows)
}

/// Builds the models a scenario needs, training inline where configured.
pub fn build_models(
    cfg: &ExperimentConfig,
    registry: &ReceiverRegistry,
) -> Result<Models, HarnessError> {
    let source = Source::from_spec(&cfg.source)?;
    let link = build_link(cfg, &source)?;
    let schedule = build_schedule(cfg)?;
    let mut uses_score = false;
    for m in &cfg.guidance.modes {
        uses_score |= registry.get(m)?.uses_score();
    }
    let score = if uses_score {
        Some(build_score(cfg, &source, &schedule)?)
    } else {
        None
    };
    Ok(Models {
        source,
        link,
        schedule,
        score,
    })
}

struct CellData {
    snr_index: usize,
    seed_index: usize,
    channel: ChannelConfig,
    seed: u64,
    sources: Vec<Vec<f64>>,
    received: Vec<Vec<f64>>,
    reference: SampleSet,
}

pub fn run_scenario_with(
    cfg: &ExperimentConfig,
    registry: &ReceiverRegistry,
    opts: RunOptions,
) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let receivers = cfg
        .guidance
        .modes
        .iter()
        .map(|m| registry.get(m))
        .collect::<Result<Vec<_>, _>>()?;
    let models = build_models(cfg, registry)?;
    let seeds = cfg.seed_list();
    let pairs: Vec<(usize, usize)> = (0..cfg.channel.snr_db.len())
        .flat_map(|i| (0..seeds.len()).map(move |j| (i, j)))
        .collect();
    let data = pairs
        .par_iter()
        .map(|&(si, ji)| draw_cell_data(cfg, &models, si, ji, seeds[ji]))
        .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(&CellData, usize)> = data
        .iter()
        .flat_map(|d| (0..receivers.len()).map(move |m| (d, m)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(d, mi)| {
            let name = receivers[mi].name();
            let where_ = || format!("mode={name} snr_db={} seed={}", d.channel.snr_db, d.seed);
            let ctx = CellContext {
                models: &models,
                channel: d.channel,
                guidance: cfg.guidance.guidance_config(name),
                keep_trace: opts.traces && receivers[mi].uses_score(),
            };
            let rng = SeededRng::new(d.seed, RECEIVER_STREAM).fork(d.channel.snr_db.to_bits());
            let t0 = Instant::now();
            let out = receivers[mi]
                .reconstruct(&ctx, &d.received, &rng)
                .map_err(|e| annotate(e, &where_()))?;
            let wall = t0.elapsed().as_secs_f64() * 1e3;
            let mut row = evaluate(cfg, &models.source, d, &out.samples)
                .map_err(|e| annotate(e, &where_()))?;
            row.mode = name.to_string();
            row.wall_ms = opts.timing.then_some(wall);
            let trace = out.trace.map(|trace| CellTrace {
                mode: name.to_string(),
                snr_db: d.channel.snr_db,
                seed: d.seed,
                trace,
            });
            Ok(((d.snr_index, d.seed_index, mi), row, trace))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut results = results;
    results.sort_by_key(|(key, _, _)| *key);
    let mut out = RunOutput::default();
    for (_, row, trace) in results {
        out.rows.push(row);
        out.traces.extend(trace);
    }
    Ok(out)
}

fn annotate(e: HarnessError, where_: &str) -> HarnessError {
    match e {
        HarnessError::Numeric { context, message } => HarnessError::Numeric {
            context: format!("{where_}: {context}"),
            message,
        },
        other => other,
    }
}

fn draw_cell_data(
    cfg: &ExperimentConfig,
    models: &Models,
    snr_index: usize,
    seed_index: usize,
    seed: u64,
) -> Result<CellData, HarnessError> {
    let snr = cfg.channel.snr_db[snr_index];
    let channel = ChannelConfig::new(snr, cfg.channel.power)
        .map_err(|e| HarnessError::validation("channel", e.to_string()))?;
    let ev = &cfg.evaluation;
    let sources = models
        .source
        .sample_n(ev.n_eval, &mut SeededRng::new(seed, SOURCE_STREAM));
    let mut noise = SeededRng::new(seed, NOISE_STREAM).fork(snr.to_bits());
    let received = sources
        .iter()
        .map(|x| models.link.transmit(x, &channel, &mut noise))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = models
        .source
        .sample_n(ev.reference, &mut SeededRng::new(seed, REFERENCE_STREAM));
    Ok(CellData {
        snr_index,
        seed_index,
        channel,
        seed,
        sources,
        received,
        reference: SampleSet::new(reference).map_err(|e| HarnessError::numeric("reference", e))?,
    })
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn total_variance(s: &SampleSet) -> f64 {
    s.covariance().trace()
}

/// Metrics for one cell. Fréchet distance is measured against the exact
/// source law when it is Gaussian, otherwise against the reference draws.
fn evaluate(
    cfg: &ExperimentConfig,
    source: &Source,
    d: &CellData,
    recon: &[Vec<f64>],
) -> Result<ReportRow, HarnessError> {
    let ev = &cfg.evaluation;
    let on = |m: Metric| ev.metrics.contains(&m);
    let metric = |e: addps_core::metrics::MetricsError| HarnessError::numeric("metrics", e);
    if recon.len() != d.sources.len() || recon.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HarnessError::numeric(
            "reconstruction",
            "non-finite or missing samples",
        ));
    }
    let set = SampleSet::new(recon.to_vec()).map_err(metric)?;
    let frechet = if on(Metric::Frechet) {
        let f = match source.gaussian() {
            Some(g) => w2_gaussian(&set.fit_gaussian().map_err(metric)?, g).map_err(metric)?,
            None => frechet_distance(&set, &d.reference).map_err(metric)?,
        };
        finite(f)
    } else {
        None
    };
    let sliced_w = if on(Metric::SlicedW) {
        let mut rng = SeededRng::new(d.seed, PROJECTION_STREAM);
        finite(
            sliced_wasserstein(&set, &d.reference, ev.sliced_projections, &mut rng)
                .map_err(metric)?,
        )
    } else {
        None
    };
    let (mse, psnr) = if on(Metric::Mse) || on(Metric::Psnr) {
        mse_psnr(&d.sources.concat(), &recon.concat(), ev.psnr_peak).map_err(metric)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let var_ratio = if on(Metric::VarRatio) {
        let truth = SampleSet::new(d.sources.clone()).map_err(metric)?;
        finite(total_variance(&set) / total_variance(&truth))
    } else {
        None
    };
    Ok(ReportRow {
        scenario: cfg.name.clone(),
        mode: String::new(),
        snr_db: d.channel.snr_db,
        steps: cfg.diffusion.steps,
        seed: d.seed,
        frechet,
        sliced_w,
        mse: on(Metric::Mse).then_some(mse).and_then(finite),
        psnr_db: on(Metric::Psnr).then_some(psnr).and_then(finite),
        wall_ms: None,
        var_ratio,
    })
}
