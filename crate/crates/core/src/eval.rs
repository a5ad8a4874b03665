//! Error metrics, distributions, tables and plot data.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{contact_momentum, BodyModel};
use crate::error::{Error, Result};
use crate::models::{ModelId, ModelParams};
use crate::sysid::{
    convergence_study, fit_batch, fit_single, irb_bound, posthoc_best, predict_outcome, FitOptions, FitResult,
    ImpactEvent,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetric {
    pub value: f64,
    pub linear: f64,
    pub angular: f64,
}

pub fn velocity_error(predicted: &Vector3<f64>, measured: &Vector3<f64>, body: &BodyModel) -> ErrorMetric {
    let d = predicted - measured;
    let linear = d.x.hypot(d.y);
    let angular = body.radius_of_gyration() * d.z.abs();
    ErrorMetric {
        value: linear.hypot(angular),
        linear,
        angular,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub histogram: Vec<HistogramBin>,
    pub bandwidth: f64,
    /// `(x, density)` on a uniform grid.
    pub kde: Vec<(f64, f64)>,
}

impl Distribution {
    pub fn kde_integral(&self) -> f64 {
        self.kde.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum()
    }

    pub fn kde_mean(&self) -> f64 {
        self.kde.windows(2).map(|w| 0.5 * (w[0].0 * w[0].1 + w[1].0 * w[1].1) * (w[1].0 - w[0].0)).sum()
    }

    pub fn histogram_mean(&self) -> f64 {
        self.histogram.iter().map(|b| 0.5 * (b.lo + b.hi) * b.density * (b.hi - b.lo)).sum()
    }

    pub fn write_histogram_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["lo", "hi", "count", "density"])?;
        for b in &self.histogram {
            wr.serialize((b.lo, b.hi, b.count, b.density))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_kde_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "density"])?;
        for p in &self.kde {
            wr.serialize(p)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Histogram and Gaussian kernel density estimate (Silverman bandwidth).
pub fn error_distribution(errors: &[f64], bins: usize) -> Result<Distribution> {
    if errors.len() < 10 {
        return Err(Error::TooFew { got: errors.len(), need: 10 });
    }
    if bins == 0 || errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("need at least one bin and finite samples".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let scale = min.abs().max(max.abs()).max(1.0);

    let (lo, width, bins) = if max - min > 1e-12 * scale {
        (min, (max - min) / bins as f64, bins)
    } else {
        let w = 1e-6 * scale;
        (min - 0.5 * w, w, 1)
    };
    let mut counts = vec![0usize; bins];
    for &e in &sorted {
        let i = (((e - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count: c,
            density: c as f64 / (n * width),
        })
        .collect();

    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let mut h = 0.9 * spread * n.powf(-0.2);
    if !(h > 1e-9 * scale) {
        h = 1e-6 * scale;
    }
    let (a, b) = (min - 6.0 * h, max + 6.0 * h);
    let m = (((b - a) / (h / 8.0)).ceil() as usize).clamp(512, 200_000);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let kde = (0..=m)
        .map(|i| {
            let x = a + (b - a) * i as f64 / m as f64;
            let d: f64 = sorted.iter().map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum();
            (x, d * norm)
        })
        .collect();
    Ok(Distribution {
        histogram,
        bandwidth: h,
        kde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub p_t: f64,
    pub p_n: f64,
    pub mean_error: f64,
    pub count: usize,
}

/// Mean velocity error binned by pre-contact momentum `M_c v_c`.
pub fn momentum_heatmap(
    events: &[ImpactEvent],
    body: &BodyModel,
    model: ModelId,
    params: ModelParams,
    grid: (usize, usize),
) -> Result<Vec<HeatCell>> {
    let (nt, nn) = (grid.0.max(1), grid.1.max(1));
    let mut pts = Vec::with_capacity(events.len());
    for e in events {
        let frame = e.frame(body)?;
        let p = contact_momentum(&frame);
        let pred = predict_outcome(model, e, body, params)?;
        pts.push((p.x, p.y, velocity_error(&pred, &e.v_post, body).value));
    }
    let range = |f: fn(&(f64, f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else if lo.is_finite() {
            (lo - 0.5, lo + 0.5)
        } else {
            (0.0, 1.0)
        }
    };
    let (t0, t1) = range(|p| p.0);
    let (n0, n1) = range(|p| p.1);
    let mut sum = vec![0.0; nt * nn];
    let mut cnt = vec![0usize; nt * nn];
    for &(pt, pn, err) in &pts {
        let i = (((pt - t0) / (t1 - t0) * nt as f64) as usize).min(nt - 1);
        let j = (((pn - n0) / (n1 - n0) * nn as f64) as usize).min(nn - 1);
        sum[j * nt + i] += err;
        cnt[j * nt + i] += 1;
    }
    let mut out = Vec::with_capacity(nt * nn);
    for j in 0..nn {
        for i in 0..nt {
            let c = cnt[j * nt + i];
            out.push(HeatCell {
                p_t: t0 + (i as f64 + 0.5) * (t1 - t0) / nt as f64,
                p_n: n0 + (j as f64 + 0.5) * (n1 - n0) / nn as f64,
                mean_error: if c > 0 { sum[j * nt + i] / c as f64 } else { 0.0 },
                count: c,
            });
        }
    }
    Ok(out)
}

pub fn write_heatmap_csv<W: Write>(cells: &[HeatCell], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["p_t", "p_n", "mean_error", "count"])?;
    for c in cells {
        wr.serialize((c.p_t, c.p_n, c.mean_error, c.count))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_scatter_csv<W: Write>(fits: &[FitResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["mu", "eps", "residual"])?;
    for f in fits {
        wr.serialize((f.params.mu, f.params.eps, f.residual))?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelId,
    pub params: ModelParams,
    pub params_std: (f64, f64),
    pub errors: Vec<f64>,
    pub best_count: usize,
    pub worst_count: usize,
    pub coverage: f64,
    /// Per-event single fits, in event order.
    pub fits: Vec<FitResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub n_events: usize,
    pub models: Vec<ModelSummary>,
    pub posthoc_errors: Vec<f64>,
    pub irb_errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateOptions {
    /// Subset size for the ± spread; half the dataset when it has no more
    /// than `k` events.
    pub k: usize,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            k: 120,
            resamples: 20,
            seed: 0,
        }
    }
}

/// Ensemble fits, per-event errors, best/worst tallies, oracles and
/// coverage for every model.
pub fn evaluate(
    events: &[ImpactEvent],
    body: &BodyModel,
    fit: &FitOptions,
    opts: &EvaluateOptions,
) -> Result<EvaluationSummary> {
    if events.is_empty() {
        return Err(Error::EmptyBatch);
    }
    // a dataset no larger than k would give identical subsets; halve instead
    let k = if opts.k < events.len() { opts.k.max(1) } else { (events.len() / 2).max(1) };
    let mut ensemble = BTreeMap::new();
    let mut spread = BTreeMap::new();
    for m in ModelId::ALL {
        let full = fit_batch(m, events, body, fit)?;
        ensemble.insert(m, full.params);
        let std = if opts.resamples > 1 && k < events.len() {
            convergence_study(m, events, body, &[k], opts.resamples, fit, opts.seed)?[0].1.params_std
        } else {
            (0.0, 0.0)
        };
        spread.insert(m, std);
    }
    let per_event: Vec<(crate::sysid::PosthocResult, f64)> = events
        .par_iter()
        .map(|e| Ok((posthoc_best(e, body, &ensemble)?, irb_bound(e, body)?.1)))
        .collect::<Result<_>>()?;
    let mut models = Vec::new();
    for m in ModelId::ALL {
        let errors: Vec<f64> = per_event
            .iter()
            .map(|(r, _)| r.errors.iter().find(|(id, _)| *id == m).map_or(f64::NAN, |x| x.1))
            .collect();
        let fits = events
            .par_iter()
            .map(|e| fit_single(m, e, body, fit))
            .collect::<Result<Vec<_>>>()?;
        let coverage = fits.iter().filter(|f| f.within_range).count() as f64 / events.len() as f64;
        models.push(ModelSummary {
            model: m,
            params: ensemble[&m],
            params_std: spread[&m],
            errors,
            best_count: per_event.iter().filter(|(r, _)| r.best.0 == m).count(),
            worst_count: per_event.iter().filter(|(r, _)| r.worst.0 == m).count(),
            coverage,
            fits,
        });
    }
    Ok(EvaluationSummary {
        n_events: events.len(),
        models,
        posthoc_errors: per_event.iter().map(|(r, _)| r.best.1).collect(),
        irb_errors: per_event.iter().map(|(_, e)| *e).collect(),
    })
}

pub const TABLE1_HEADER: [&str; 7] = ["model", "mu", "mu_std", "eps", "eps_std", "best_pct", "worst_pct"];
pub const TABLE2_HEADER: [&str; 2] = ["model", "fraction"];

pub fn write_table1<W: Write>(s: &EvaluationSummary, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TABLE1_HEADER)?;
    let n = s.n_events.max(1) as f64;
    for m in &s.models {
        wr.write_record([
            m.model.to_string(),
            format!("{:.3}", m.params.mu),
            format!("{:.3}", m.params_std.0),
            format!("{:.3}", m.params.eps),
            format!("{:.3}", m.params_std.1),
            format!("{:.1}", 100.0 * m.best_count as f64 / n),
            format!("{:.1}", 100.0 * m.worst_count as f64 / n),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_table2<W: Write>(s: &EvaluationSummary, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TABLE2_HEADER)?;
    for m in &s.models {
        wr.write_record([m.model.to_string(), format!("{:.3}", m.coverage)])?;
    }
    wr.flush()?;
    Ok(())
}

/// Minimal SVG with one polyline per named series.
pub fn svg_polylines(series: &[(String, Vec<(f64, f64)>)]) -> String {
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let (w, h) = (480.0, 360.0);
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#333333"];
    let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    for (i, (name, pts)) in series.iter().enumerate() {
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", (x - x0) / (x1 - x0) * w, h - (y - y0) / (y1 - y0) * h))
            .collect();
        out.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{}\" points=\"{}\"><title>{}</title></polyline>\n",
            colors[i % colors.len()],
            path.join(" "),
            name
        ));
    }
    out.push_str("</svg>\n");
    out
}
