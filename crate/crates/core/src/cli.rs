//! Command-line surface. `run` returns the process exit code.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::AppConfig;
use crate::dynamics::{BodyModel, ContactFrame};
use crate::error::{Error, Result};
use crate::eval::{self, EvaluationSummary};
use crate::feasible::{BoundaryTag, EnergyEllipse};
use crate::models::{region_trace_capped, ModelId, ModelParams};
use crate::sim::{generate_dataset, manifest};
use crate::sysid::{convergence_study, fit_batch, fit_single, ImpactEvent};
use crate::trajectory::{extract_events, load_trajectory, validate};

#[derive(Debug, Parser)]
#[command(name = "planar-impact", version, about = "Planar impact models: simulate, extract, identify, evaluate")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON configuration; falls back to $PLANAR_IMPACT_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Body model JSON overriding the configured body.
    #[arg(long, global = true)]
    body: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Also write SVG renderings next to the CSV files.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitMode {
    Single,
    Batch,
    Convergence,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate drops; writes drop_NNNN.csv, drop_NNNN.events.json and manifest.json.
    Simulate {
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Generating model; all six round-robin when omitted.
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelId>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Run the trajectory validation tests; exit 1 if any file fails.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Extract impact events from trajectories into events.json.
    Events {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Fit (μ, ε) for one model.
    Identify {
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_parser = parse_model)]
        model: ModelId,
        #[arg(long, value_enum, default_value_t = FitMode::Batch)]
        mode: FitMode,
        /// Subset sizes for convergence mode.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        resamples: usize,
    },
    /// Fit all models and write summary tables, distributions and heatmaps.
    Evaluate {
        #[arg(long)]
        events: PathBuf,
    },
    /// Trace prediction regions over (μ, ε) for a contact-space frame.
    Regions {
        #[arg(long, value_parser = parse_model, required_unless_present = "all")]
        model: Option<ModelId>,
        #[arg(long)]
        all: bool,
        /// a_tt,a_tn,a_nn,v_t,v_n
        #[arg(long, value_delimiter = ',', num_args = 5, default_values_t = [1.1, 0.1, 1.1, 1.0, -1.0])]
        frame: Vec<f64>,
    },
}

fn parse_model(s: &str) -> std::result::Result<ModelId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

struct Ctx {
    cfg: AppConfig,
    body: BodyModel,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let f = BufWriter::new(File::create(self.path(name))?);
        serde_json::to_writer_pretty(f, value)?;
        Ok(())
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = AppConfig::resolve(cli.config.as_deref())?;
    let body = match &cli.body {
        Some(p) => BodyModel::load(p)?,
        None => cfg.body.clone(),
    };
    std::fs::create_dir_all(&cli.out_dir)?;
    let ctx = Ctx {
        cfg,
        body,
        out: cli.out_dir.clone(),
    };
    match &cli.cmd {
        Command::Simulate { n, model, mu, eps } => simulate(&ctx, *n, *model, *mu, *eps, cli.seed),
        Command::Validate { files } => validate_files(&ctx, files),
        Command::Events { files } => events(&ctx, files),
        Command::Identify {
            events,
            model,
            mode,
            k,
            resamples,
        } => identify(&ctx, events, *model, *mode, k, *resamples, cli.seed),
        Command::Evaluate { events } => evaluate(&ctx, events, cli.seed, cli.svg),
        Command::Regions { model, all, frame } => regions(&ctx, *model, *all, frame, cli.svg),
    }
}

fn simulate(ctx: &Ctx, n: usize, model: Option<ModelId>, mu: Option<f64>, eps: Option<f64>, seed: u64) -> Result<i32> {
    let params = ModelParams::new(mu.unwrap_or(ctx.cfg.truth.mu), eps.unwrap_or(ctx.cfg.truth.eps))?;
    let models: Vec<ModelId> = model.map_or(ModelId::ALL.to_vec(), |m| vec![m]);
    let records = generate_dataset(n, &ctx.cfg.sampler, &ctx.body, &models, params, &ctx.cfg.sim, seed)?;
    let mut files = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let name = format!("drop_{i:04}.csv");
        r.series.save(ctx.path(&name))?;
        ctx.write_json(&format!("drop_{i:04}.events.json"), &r.truth_events)?;
        files.push(name);
    }
    ctx.body.save(ctx.path("body.json"))?;
    ctx.write_json("manifest.json", &manifest(&records, &files))?;
    let impacts: usize = records.iter().map(|r| r.truth_events.len()).sum();
    println!("{} drops, {impacts} impacts -> {}", records.len(), ctx.out.display());
    Ok(0)
}

fn validate_files(ctx: &Ctx, files: &[PathBuf]) -> Result<i32> {
    let mut reports = Vec::new();
    let mut failed = 0;
    for f in files {
        let series = load_trajectory(f)?;
        let r = validate(&series, &ctx.body, &ctx.cfg.pipeline)?;
        if !r.passed() {
            failed += 1;
        }
        println!("{}: {}", f.display(), if r.passed() { "ok" } else { "FAILED" });
        reports.push(serde_json::json!({ "file": f.display().to_string(), "report": r }));
    }
    ctx.write_json("validation.json", &reports)?;
    Ok(if failed > 0 { 1 } else { 0 })
}

fn events(ctx: &Ctx, files: &[PathBuf]) -> Result<i32> {
    let mut all = Vec::new();
    let mut rejected = 0;
    for f in files {
        let series = load_trajectory(f)?;
        let report = validate(&series, &ctx.body, &ctx.cfg.pipeline)?;
        if !report.passed() {
            eprintln!("{}: failed validation, skipped", f.display());
            rejected += 1;
            continue;
        }
        let ex = extract_events(&series, &ctx.body, &ctx.cfg.pipeline)?;
        for d in &ex.dropped {
            eprintln!("{}: impact {} dropped: {}", f.display(), d.index, d.reason);
        }
        all.extend(ex.events);
    }
    ctx.write_json("events.json", &all)?;
    println!("{} events from {} files", all.len(), files.len() - rejected);
    Ok(if rejected > 0 { 1 } else { 0 })
}

pub fn load_events(path: &Path) -> Result<Vec<ImpactEvent>> {
    let events: Vec<ImpactEvent> = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
    if events.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(events)
}

fn identify(
    ctx: &Ctx,
    path: &Path,
    model: ModelId,
    mode: FitMode,
    ks: &[usize],
    resamples: usize,
    seed: u64,
) -> Result<i32> {
    let events = load_events(path)?;
    let fit = &ctx.cfg.fit;
    let value = match mode {
        FitMode::Single => {
            let fits = events
                .par_iter()
                .map(|e| fit_single(model, e, &ctx.body, fit))
                .collect::<Result<Vec<_>>>()?;
            eval::write_scatter_csv(&fits, ctx.create(&format!("scatter_{model}.csv"))?)?;
            serde_json::json!({ "model": model, "mode": "single", "fits": fits })
        }
        FitMode::Batch => {
            let r = fit_batch(model, &events, &ctx.body, fit)?;
            serde_json::json!({ "model": model, "mode": "batch", "n_events": events.len(), "fit": r })
        }
        FitMode::Convergence => {
            let ks: Vec<usize> = if ks.is_empty() {
                [10, 30, 60, 120].into_iter().filter(|&k| k <= events.len()).collect()
            } else {
                ks.to_vec()
            };
            let rows = convergence_study(model, &events, &ctx.body, &ks, resamples, fit, seed)?;
            let rows: Vec<_> = rows.into_iter().map(|(k, e)| serde_json::json!({ "k": k, "ensemble": e })).collect();
            serde_json::json!({ "model": model, "mode": "convergence", "studies": rows })
        }
    };
    let name = format!("identify_{model}.json");
    ctx.write_json(&name, &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(0)
}

fn evaluate(ctx: &Ctx, path: &Path, seed: u64, svg: bool) -> Result<i32> {
    let events = load_events(path)?;
    let mut opts = ctx.cfg.evaluate;
    opts.seed = seed;
    let summary: EvaluationSummary = eval::evaluate(&events, &ctx.body, &ctx.cfg.fit, &opts)?;
    ctx.write_json("summary.json", &summary)?;
    eval::write_table1(&summary, ctx.create("table1.csv")?)?;
    eval::write_table2(&summary, ctx.create("table2.csv")?)?;

    let mut curves = Vec::new();
    let named = summary
        .models
        .iter()
        .map(|m| (m.model.to_string(), &m.errors))
        .chain([
            ("posthoc".to_string(), &summary.posthoc_errors),
            ("irb".to_string(), &summary.irb_errors),
        ]);
    for (name, errors) in named {
        match eval::error_distribution(errors, ctx.cfg.histogram_bins) {
            Ok(d) => {
                d.write_histogram_csv(ctx.create(&format!("error_hist_{name}.csv"))?)?;
                d.write_kde_csv(ctx.create(&format!("error_kde_{name}.csv"))?)?;
                curves.push((name, d.kde));
            }
            Err(Error::TooFew { got, need }) => eprintln!("{name}: {got} errors, need {need} for a density"),
            Err(e) => return Err(e),
        }
    }
    for m in &summary.models {
        let cells = eval::momentum_heatmap(&events, &ctx.body, m.model, m.params, ctx.cfg.heatmap_grid)?;
        eval::write_heatmap_csv(&cells, ctx.create(&format!("heatmap_{}.csv", m.model))?)?;
        eval::write_scatter_csv(&m.fits, ctx.create(&format!("scatter_{}.csv", m.model))?)?;
    }
    if svg && !curves.is_empty() {
        std::fs::write(ctx.path("error_density.svg"), eval::svg_polylines(&curves))?;
    }
    print!("{}", std::fs::read_to_string(ctx.path("table1.csv"))?);
    Ok(0)
}

fn regions(ctx: &Ctx, model: Option<ModelId>, all: bool, frame: &[f64], svg: bool) -> Result<i32> {
    let [a_tt, a_tn, a_nn, v_t, v_n] = <[f64; 5]>::try_from(frame)
        .map_err(|_| Error::InvalidArgument("--frame takes five numbers".into()))?;
    let frame = ContactFrame::from_contact_space(Matrix2::new(a_tt, a_tn, a_tn, a_nn), Vector2::new(v_t, v_n))?;
    let models: Vec<ModelId> = if all { ModelId::ALL.to_vec() } else { model.into_iter().collect() };
    let n_models = models.len();
    let mut curves = Vec::new();
    for m in models {
        let trace = region_trace_capped(m, &frame, ctx.cfg.region_grid, ctx.cfg.fit.mu_max)?;
        let mut w = csv::Writer::from_writer(ctx.create(&format!("region_{m}.csv"))?);
        w.write_record(["model", "mu", "eps", "p_t", "p_n"])?;
        for p in &trace.points {
            w.write_record([m.to_string(), p.mu.to_string(), p.eps.to_string(), p.impulse.p_t.to_string(), p.impulse.p_n.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(ctx.create(&format!("hull_{m}.csv"))?);
        w.write_record(["p_t", "p_n"])?;
        for p in &trace.hull {
            w.serialize((p.p_t, p.p_n))?;
        }
        w.flush()?;
        let mut closed: Vec<(f64, f64)> = trace.hull.iter().map(|p| (p.p_t, p.p_n)).collect();
        closed.extend(closed.first().copied());
        curves.push((m.to_string(), closed));
    }
    let ellipse = EnergyEllipse::new(&frame)?;
    let boundary = ellipse.boundary_polyline(256);
    let mut w = csv::Writer::from_writer(ctx.create("ellipse.csv")?);
    w.write_record(["p_t", "p_n", "edge"])?;
    for (p, tag) in &boundary {
        let edge = match tag {
            BoundaryTag::Ellipse => "ellipse",
            BoundaryTag::Clip => "clip",
        };
        w.write_record([p.p_t.to_string(), p.p_n.to_string(), edge.to_string()])?;
    }
    w.flush()?;
    if svg {
        curves.push(("feasible".into(), boundary.iter().map(|(p, _)| (p.p_t, p.p_n)).collect()));
        std::fs::write(ctx.path("regions.svg"), eval::svg_polylines(&curves))?;
    }
    println!("wrote {} region(s) and ellipse.csv to {}", n_models, ctx.out.display());
    Ok(0)
}
