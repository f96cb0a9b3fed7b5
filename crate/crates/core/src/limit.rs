//! ε-sweeps of the small-core limit: block norms of `R^ε_z` against the
//! effective models, quasi-unitary defects, and log-log rate fits.
//!
//! Functions on the full graph are stored as the lead part followed by the
//! core part. `J` embeds a lead function by zero extension, `J*` restricts.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{opnorm, Mesh, MeshSpec, OpNorm, OpNormOptions};
use crate::graph::GraphSystem;
use crate::krein::{
    check_limit_matrix, join, split, EffectiveResolvent, KreinAtZ, KreinSystem, OuterAtZ, SeriesOptions,
};
use crate::linalg::{c, CVec, C};
use crate::spectral::{apply_lambda, classify, default_tol0, Classification, ClassificationSummary};

/// `J ψ^out = (ψ^out, 0)`.
pub fn embed(u_out: &CVec, n_in: usize) -> CVec {
    join(u_out, &CVec::zeros(n_in))
}

/// `J* (ψ^out, ψ^in) = ψ^out`.
pub fn project(u: &CVec, n_out: usize) -> Result<CVec> {
    if n_out > u.len() {
        return Err(Error::InvalidArgument(format!("cannot project {} values onto {n_out}", u.len())));
    }
    Ok(u.rows(0, n_out).into_owned())
}

/// `2^{-2}, ..., 2^{-7}`.
pub fn default_eps_grid() -> Vec<f64> {
    (2..=7).map(|k| 2f64.powi(-k)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    pub z: C,
    pub mesh: MeshSpec,
    /// Zero threshold; `None` uses [`default_tol0`].
    pub tol0: Option<f64>,
    pub force: bool,
    pub series: SeriesOptions,
    pub opnorm: OpNormOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps: default_eps_grid(),
            z: C::new(0.0, 2.0),
            mesh: MeshSpec::default(),
            tol0: None,
            force: false,
            series: SeriesOptions::default(),
            opnorm: OpNormOptions::default(),
        }
    }
}

/// Short SHA-256 digest of the serialized configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepRecord {
    pub eps: f64,
    pub z: [f64; 2],
    pub case: String,
    /// `‖J* R^ε J - R_eff‖`
    pub outout_dev: f64,
    /// `‖J* R^ε (I - JJ*)‖`
    pub outin: f64,
    /// `‖(I - JJ*) R^ε J‖`
    pub inout: f64,
    /// `‖(I - JJ*) R^ε (I - JJ*) + z^{-1} Λ^ε‖` (`Λ = 0` in the generic case)
    pub inin_dev: f64,
    /// `‖(I - JJ*) R^ε‖`
    pub delta1: f64,
    /// `‖J R_eff - R^ε J‖`
    pub delta2: f64,
    /// `‖(M^in M^out - I)^{-1} M^in - P̂ (P̂ M^out P̂)^{-1} P̂‖`
    pub limit_matrix_dev: f64,
    pub converged: bool,
    pub max_iterations: usize,
    pub h_out: f64,
    pub h_in: f64,
    pub n_modes: usize,
    pub series_tail: f64,
    pub cond: [f64; 2],
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFailure {
    pub eps: f64,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepHeader {
    pub version: String,
    pub config: SweepConfig,
    pub config_hash: String,
    pub classification: ClassificationSummary,
    /// `‖Λ² - Λ‖` for the coefficient matrix `L`.
    pub lambda_idempotency: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepOutput {
    pub header: SweepHeader,
    pub records: Vec<SweepRecord>,
    pub failures: Vec<SweepFailure>,
}

/// Sweep data shared by every ε.
struct Context<'a> {
    ks: &'a KreinSystem,
    cls: &'a Classification,
    outer: [Arc<OuterAtZ>; 2],
    eff: [EffectiveResolvent; 2],
    cfg: &'a SweepConfig,
}

/// Runs the ε-sweep of one system at one `z`. Failures at individual ε
/// are recorded and the remaining ε proceed.
pub fn sweep(system: &GraphSystem, cfg: &SweepConfig) -> Result<SweepOutput> {
    if cfg.z.im == 0.0 {
        return Err(Error::InvalidArgument("sweep needs a non-real z".into()));
    }
    if cfg.eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::InvalidArgument("ε values must lie in (0, 1]".into()));
    }
    let unit = system.unit();
    let ks = KreinSystem::new(&unit, &cfg.mesh)?;
    let tol0 = cfg.tol0.unwrap_or_else(|| default_tol0(&unit));
    let cls = classify(ks.eigen(), tol0, cfg.force)?;
    info!("sweep: {}", cls.describe());
    let outer = [Arc::new(ks.outer().at(cfg.z)?), Arc::new(ks.outer().at(cfg.z.conj())?)];
    let p_hat = cls.p_hat();
    let eff = [
        EffectiveResolvent::new(outer[0].clone(), &p_hat)?,
        EffectiveResolvent::new(outer[1].clone(), &p_hat)?,
    ];
    let l = cls.l();
    let lambda_idempotency = (&l * &l - &l).norm();
    let ctx = Context { ks: &ks, cls: &cls, outer, eff, cfg };

    let mut eps = cfg.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let results: Vec<(f64, Result<SweepRecord>)> = eps.par_iter().map(|&e| (e, sweep_point(&ctx, e))).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(err) => {
                warn!("sweep at ε = {e}: {err}");
                failures.push(SweepFailure { eps: e, message: err.to_string() });
            }
        }
    }
    let header = SweepHeader {
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        classification: cls.summary(),
        lambda_idempotency,
    };
    Ok(SweepOutput { header, records, failures })
}

fn sweep_point(ctx: &Context, eps: f64) -> Result<SweepRecord> {
    let start = Instant::now();
    let z = ctx.cfg.z;
    let at = ctx.ks.at_with(ctx.outer[0].clone(), eps, &ctx.cfg.series)?;
    let bt = ctx.ks.at_with(ctx.outer[1].clone(), eps, &ctx.cfg.series)?;
    let n_out = at.n_out();
    let n_in = at.in_mesh().total;
    let out_mesh = at.out_mesh().clone();
    let in_mesh = at.in_mesh().clone();
    let full_mesh = at.full_mesh();
    let unit_mesh = ctx.ks.eigen().mesh().clone();
    let lambda = |v: &CVec| apply_lambda(ctx.cls, &unit_mesh, v);
    let zero_out = CVec::zeros(n_out);
    let zero_in = CVec::zeros(n_in);
    let opts = &ctx.cfg.opnorm;
    let mo = |v: &CVec| out_mesh.mass_apply(v);
    let mi = |v: &CVec| in_mesh.mass_apply(v);
    let mf = |v: &CVec| full_mesh.mass_apply(v);
    // R^ε at z and z̄ applied to pure lead or pure core data
    let r_out = |k: &KreinAtZ, v: &CVec| k.apply(v, &zero_in);
    let r_in = |k: &KreinAtZ, v: &CVec| k.apply(&zero_out, v);
    let (a, b) = (&at, &bt);

    let outout = opnorm(
        n_out,
        &|v| r_out(a, v).0 - ctx.eff[0].apply(v),
        &|v| r_out(b, v).0 - ctx.eff[1].apply(v),
        &mo,
        &mo,
        opts,
    );
    let outin = opnorm(n_in, &|v| r_in(a, v).0, &|v| r_out(b, v).1, &mi, &mo, opts);
    let inout = opnorm(n_out, &|v| r_out(a, v).1, &|v| r_in(b, v).0, &mo, &mi, opts);
    let zi = c(1.0) / z;
    let inin = opnorm(
        n_in,
        &|v| r_in(a, v).1 + lambda(v) * zi,
        &|v| r_in(b, v).1 + lambda(v) * zi.conj(),
        &mi,
        &mi,
        opts,
    );
    let delta1 = opnorm(
        n_out + n_in,
        &|v| a.apply_joined(v).rows(n_out, n_in).into_owned(),
        &|v| b.apply_joined(&join(&zero_out, v)),
        &mf,
        &mi,
        opts,
    );
    let delta2 = opnorm(
        n_out,
        &|v| {
            let (uo, ui) = r_out(a, v);
            join(&(ctx.eff[0].apply(v) - uo), &(-ui))
        },
        &|v| {
            let (vo, _) = split(v, n_out);
            ctx.eff[1].apply(&vo) - b.apply_joined(v).rows(0, n_out).into_owned()
        },
        &mo,
        &mf,
        opts,
    );
    let limit = check_limit_matrix(a.m_out(), a.m_in(), &ctx.cls.p_hat())?;
    let norms: [&OpNorm; 6] = [&outout, &outin, &inout, &inin, &delta1, &delta2];
    Ok(SweepRecord {
        eps,
        z: [z.re, z.im],
        case: if ctx.cls.is_generic() { "Generic" } else { "NonGeneric" }.into(),
        outout_dev: outout.value,
        outin: outin.value,
        inout: inout.value,
        inin_dev: inin.value,
        delta1: delta1.value,
        delta2: delta2.value,
        limit_matrix_dev: limit.deviation,
        converged: norms.iter().all(|n| n.converged),
        max_iterations: norms.iter().map(|n| n.iterations).max().unwrap_or(0),
        h_out: out_mesh.max_h(),
        h_in: in_mesh.max_h(),
        n_modes: a.inner().m_in().n_used,
        series_tail: a.inner().m_in().tail,
        cond: a.blocks().cond,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Quantity of a [`SweepRecord`] that can be fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    OutoutDev,
    Outin,
    Inout,
    IninDev,
    Delta1,
    Delta2,
    LimitMatrixDev,
}

impl Block {
    pub const ALL: [Block; 7] = [
        Block::OutoutDev,
        Block::Outin,
        Block::Inout,
        Block::IninDev,
        Block::Delta1,
        Block::Delta2,
        Block::LimitMatrixDev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::OutoutDev => "outout_dev",
            Block::Outin => "outin",
            Block::Inout => "inout",
            Block::IninDev => "inin_dev",
            Block::Delta1 => "delta1",
            Block::Delta2 => "delta2",
            Block::LimitMatrixDev => "limit_matrix_dev",
        }
    }

    pub fn value(self, r: &SweepRecord) -> f64 {
        match self {
            Block::OutoutDev => r.outout_dev,
            Block::Outin => r.outin,
            Block::Inout => r.inout,
            Block::IninDev => r.inin_dev,
            Block::Delta1 => r.delta1,
            Block::Delta2 => r.delta2,
            Block::LimitMatrixDev => r.limit_matrix_dev,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RateFit {
    pub block: String,
    pub slope: f64,
    pub stderr: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub points: usize,
    /// Largest ε, if it was dropped as an outlier.
    pub dropped: Option<f64>,
}

struct Line {
    slope: f64,
    intercept: f64,
    /// Residual standard deviation.
    s: f64,
    stderr: f64,
}

fn least_squares(x: &[f64], y: &[f64]) -> Line {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let s = if x.len() > 2 { (ssr / (n - 2.0)).sqrt() } else { 0.0 };
    Line { slope, intercept, s, stderr: s / sxx.sqrt() }
}

/// Least-squares slope of `log value` against `log ε`.
///
/// When at least five points are available, the largest ε is dropped if it
/// lies more than three residual standard deviations (and more than 1e-9)
/// off the line fitted to the remaining points.
pub fn fit_power(block: &str, eps: &[f64], values: &[f64]) -> Result<RateFit> {
    let mut pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(values)
        .filter(|(e, v)| **e > 0.0 && **v > 0.0 && e.is_finite() && v.is_finite())
        .map(|(e, v)| (*e, *v))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "rate fit for {block} needs at least 4 positive points, got {}",
            pts.len()
        )));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let n = x.len();
    let mut line = least_squares(&x, &y);
    let mut dropped = None;
    let mut used = n;
    if n >= 5 {
        let rest = least_squares(&x[..n - 1], &y[..n - 1]);
        let r = (y[n - 1] - rest.intercept - rest.slope * x[n - 1]).abs();
        if r > 3.0 * rest.s && r > 1e-9 {
            dropped = Some(pts[n - 1].0);
            line = rest;
            used = n - 1;
        }
    }
    Ok(RateFit {
        block: block.into(),
        slope: line.slope,
        stderr: line.stderr,
        eps_min: pts[0].0,
        eps_max: pts[used - 1].0,
        points: used,
        dropped,
    })
}

pub fn fit_rate(records: &[SweepRecord], block: Block) -> Result<RateFit> {
    let eps: Vec<f64> = records.iter().map(|r| r.eps).collect();
    let vals: Vec<f64> = records.iter().map(|r| block.value(r)).collect();
    fit_power(block.name(), &eps, &vals)
}

/// Fits every block that has enough usable points.
pub fn fit_all(records: &[SweepRecord]) -> Vec<RateFit> {
    Block::ALL.iter().filter_map(|&b| fit_rate(records, b).ok()).collect()
}

/// `(δ₁, δ₂)` for one ε, as computed by [`sweep`].
pub fn quasi_unitary_delta(record: &SweepRecord) -> (f64, f64) {
    (record.delta1, record.delta2)
}

/// JSON lines: a header, one line per record and failure, then the fits.
pub fn write_jsonl(out: &SweepOutput, fits: &[RateFit], w: &mut impl Write) -> Result<()> {
    let io = |e: std::io::Error| Error::InvalidArgument(format!("write failed: {e}"));
    let json = |v: serde_json::Value| serde_json::to_string(&v).expect("json value");
    writeln!(w, "{}", json(serde_json::json!({ "header": out.header }))).map_err(io)?;
    for r in &out.records {
        writeln!(w, "{}", json(serde_json::json!({ "record": r }))).map_err(io)?;
    }
    for f in &out.failures {
        writeln!(w, "{}", json(serde_json::json!({ "failure": f }))).map_err(io)?;
    }
    writeln!(w, "{}", json(serde_json::json!({ "fits": fits }))).map_err(io)?;
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    eps: f64,
    z_re: f64,
    z_im: f64,
    case: &'a str,
    outout_dev: f64,
    outin: f64,
    inout: f64,
    inin_dev: f64,
    delta1: f64,
    delta2: f64,
    limit_matrix_dev: f64,
    converged: bool,
    h_out: f64,
    h_in: f64,
    n_modes: usize,
    seconds: f64,
}

pub fn write_csv(records: &[SweepRecord], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(CsvRow {
            eps: r.eps,
            z_re: r.z[0],
            z_im: r.z[1],
            case: &r.case,
            outout_dev: r.outout_dev,
            outin: r.outin,
            inout: r.inout,
            inin_dev: r.inin_dev,
            delta1: r.delta1,
            delta2: r.delta2,
            limit_matrix_dev: r.limit_matrix_dev,
            converged: r.converged,
            h_out: r.h_out,
            h_in: r.h_in,
            n_modes: r.n_modes,
            seconds: r.seconds,
        })
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    wr.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(())
}

/// One gnuplot data block per quantity (`index` selects it), columns
/// `log ε` and `log norm`, fitted slopes in the comments.
pub fn write_gnuplot(records: &[SweepRecord], fits: &[RateFit], w: &mut impl Write) -> Result<()> {
    let io = |e: std::io::Error| Error::InvalidArgument(format!("write failed: {e}"));
    for (i, b) in Block::ALL.iter().enumerate() {
        if i > 0 {
            write!(w, "\n\n").map_err(io)?;
        }
        match fits.iter().find(|f| f.block == b.name()) {
            Some(f) => writeln!(w, "# {} slope {:.6} stderr {:.3e}", b.name(), f.slope, f.stderr),
            None => writeln!(w, "# {} (no fit)", b.name()),
        }
        .map_err(io)?;
        writeln!(w, "# log_eps log_norm").map_err(io)?;
        for r in records {
            let v = b.value(r);
            if v > 0.0 && v.is_finite() {
                writeln!(w, "{:.10e} {:.10e}", r.eps.ln(), v.ln()).map_err(io)?;
            }
        }
    }
    Ok(())
}

/// Mesh of the full graph at scale `eps` in the sweep layout.
pub fn full_mesh(ks: &KreinSystem, eps: f64) -> Result<Mesh> {
    let inner = ks.inner_ops(eps)?;
    Ok(ks.outer().mesh().join(&inner.mesh))
}
