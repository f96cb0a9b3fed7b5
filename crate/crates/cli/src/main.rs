#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use qgraph::error::Error;
use qgraph::fem::{MeshSpec, OpNormOptions};
use qgraph::graph::GraphSystem;
use qgraph::io::read_graph;
use qgraph::krein::{krein_vs_direct, OracleConfig, SeriesOptions};
use qgraph::limit::{default_eps_grid, fit_all, sweep, write_csv, write_gnuplot, write_jsonl, SweepConfig};
use qgraph::linalg::CMat;
use qgraph::spectral::{auxiliary_spectrum, chat_matrix, classify, default_tol0, weyl_check};

const EXIT_PARSE: u8 = 2;
const EXIT_AMBIGUOUS: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "qgraph", version, about = "Small-core limits of quantum graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalues and connecting-vertex values of the auxiliary core operator.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Number of modes to write.
        #[arg(long, default_value_t = 20)]
        modes: usize,
    },
    /// Generic / non-generic classification and the effective junction condition.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// Compares the Kreĭn resolvent evaluation with direct discretization.
    KreinCheck {
        #[command(flatten)]
        common: Common,
        /// Number of random smooth inputs.
        #[arg(long, default_value_t = 20)]
        inputs: usize,
        /// Largest admissible relative discrepancy.
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// Use zero inputs instead of random ones.
        #[arg(long)]
        zero_inputs: bool,
    },
    /// ε-sweep of the resolvent blocks with fitted convergence rates.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Growth of the core eigenvalues and sup norms of the eigenfunctions.
    #[command(name = "weyl-check", alias = "weyl")]
    WeylCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        n_min: usize,
        #[arg(long, default_value_t = 30)]
        n_max: usize,
        /// Fails when some `sup |φ_n|` exceeds this bound.
        #[arg(long, default_value_t = 2.1)]
        sup_bound: f64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Graph document (JSON).
    #[arg(long)]
    graph: PathBuf,
    /// Spectral parameter as `RE,IM`; repeat for several values.
    #[arg(long = "z", value_parser = parse_z, allow_hyphen_values = true)]
    z: Vec<Complex64>,
    /// Comma-separated ε values in (0, 1].
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    nodes_per_edge: usize,
    /// Zero-mode threshold (default scales with the core potential and lengths).
    #[arg(long)]
    tol0: Option<f64>,
    /// Largest admissible relative tail of the spectral series.
    #[arg(long, default_value_t = 1e-8)]
    tail_tol: f64,
    /// Output directory.
    #[arg(long, env = "QGRAPH_OUT", default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Proceed when an eigenvalue falls in the ambiguous zero band.
    #[arg(long)]
    force: bool,
}

fn parse_z(s: &str) -> std::result::Result<Complex64, String> {
    let (re, im) = s.split_once(',').ok_or_else(|| format!("expected RE,IM, got {s:?}"))?;
    let re: f64 = re.trim().parse().map_err(|e| format!("bad real part {re:?}: {e}"))?;
    let im: f64 = im.trim().parse().map_err(|e| format!("bad imaginary part {im:?}: {e}"))?;
    Ok(Complex64::new(re, im))
}

impl Common {
    fn validate(&self) -> Result<()> {
        if self.nodes_per_edge < 3 {
            bail!("--nodes-per-edge must be at least 3");
        }
        if let Some(t) = self.tol0 {
            if !(t > 0.0) {
                bail!("--tol0 must be positive");
            }
        }
        if !(self.tail_tol > 0.0) {
            bail!("--tail-tol must be positive");
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            bail!("ε values must lie in (0, 1], got {e}");
        }
        if let Some(z) = self.z.iter().find(|z| z.im == 0.0) {
            bail!("z must be non-real, got {z}");
        }
        Ok(())
    }

    fn mesh(&self) -> MeshSpec {
        MeshSpec::with_nodes(self.nodes_per_edge)
    }

    fn z_values(&self) -> Vec<Complex64> {
        if self.z.is_empty() {
            vec![Complex64::new(0.0, 2.0)]
        } else {
            self.z.clone()
        }
    }

    fn series(&self) -> SeriesOptions {
        SeriesOptions { tail_tol: self.tail_tol, ..Default::default() }
    }

    fn load(&self) -> Result<GraphSystem> {
        self.validate()?;
        let sys = read_graph(&self.graph)?;
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(sys)
    }

    fn tol0(&self, sys: &GraphSystem) -> f64 {
        self.tol0.unwrap_or_else(|| default_tol0(&sys.unit()))
    }
}

/// A check ran to completion but the result is outside its threshold.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn format_matrix(m: &CMat) -> String {
    let fmt = |v: Complex64| {
        if v.im.abs() < 1e-12 {
            format!("{:>9.5}", v.re)
        } else {
            format!("{:.5}{:+.5}i", v.re, v.im)
        }
    };
    (0..m.nrows())
        .map(|i| {
            let row: Vec<String> = (0..m.ncols()).map(|j| fmt(m[(i, j)])).collect();
            format!("  [{}]", row.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn cmd_spectrum(common: &Common, modes: usize) -> Result<()> {
    let sys = common.load()?;
    let eig = auxiliary_spectrum(&sys.unit(), &common.mesh())?;
    let n = modes.min(eig.len());
    let mut wr = csv::Writer::from_writer(create(&common.out, "spectrum.csv")?);
    let mut header = vec!["n".to_string(), "lambda".to_string()];
    for j in 1..=eig.n_leads() {
        header.push(format!("c{j}_re"));
        header.push(format!("c{j}_im"));
    }
    wr.write_record(&header)?;
    for k in 0..n {
        let mut row = vec![k.to_string(), format!("{:.12e}", eig.values[k])];
        for j in 0..eig.n_leads() {
            row.push(format!("{:.12e}", eig.c[(j, k)].re));
            row.push(format!("{:.12e}", eig.c[(j, k)].im));
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    println!("{:>4} {:>20}", "n", "lambda");
    for k in 0..n.min(10) {
        println!("{k:>4} {:>20.12}", eig.values[k]);
    }
    println!("wrote {}", common.out.join("spectrum.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct ClassifyOutput {
    graph: String,
    nodes_per_edge: usize,
    description: String,
    #[serde(flatten)]
    summary: qgraph::spectral::ClassificationSummary,
    c_hat_gram: Vec<Vec<[f64; 2]>>,
}

fn rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

fn cmd_classify(common: &Common) -> Result<()> {
    let sys = common.load()?;
    let unit = sys.unit();
    let eig = auxiliary_spectrum(&unit, &common.mesh())?;
    let cls = classify(&eig, common.tol0(&sys), common.force)?;
    let chat = chat_matrix(&cls.zero_modes.c_hat);
    println!("{}", cls.describe());
    println!("m = {}", cls.zero_modes.m());
    println!("C^ =\n{}", format_matrix(&chat));
    println!("P^ =\n{}", format_matrix(&cls.p_hat()));
    if !cls.is_generic() {
        println!("L =\n{}", format_matrix(&cls.l()));
    }
    println!("effective condition at the merged vertex: {}", cls.effective_condition());
    let out = ClassifyOutput {
        graph: common.graph.display().to_string(),
        nodes_per_edge: common.nodes_per_edge,
        description: cls.describe(),
        summary: cls.summary(),
        c_hat_gram: rows(&chat),
    };
    write_json(&common.out, "classification.json", &out)?;
    Ok(())
}

fn cmd_krein_check(common: &Common, inputs: usize, threshold: f64, zero_inputs: bool) -> Result<()> {
    let sys = common.load()?;
    let eps = if common.eps.is_empty() { vec![sys.epsilon()] } else { common.eps.clone() };
    let mut reports = Vec::new();
    let mut worst: f64 = 0.0;
    for z in common.z_values() {
        let cfg = OracleConfig {
            eps: eps.clone(),
            z,
            nodes_per_edge: common.nodes_per_edge,
            inputs,
            seed: common.seed,
            series: common.series(),
            zero_inputs,
        };
        let rep = krein_vs_direct(&sys, &cfg)?;
        println!("z = {z}");
        println!("{:>10} {:>12} {:>12} {:>12} {:>8} {:>12}", "eps", "same_mesh", "at_h", "at_h/2", "ratio", "vertex_res");
        for r in &rep.records {
            println!(
                "{:>10.5} {:>12.3e} {:>12.3e} {:>12.3e} {:>8.2} {:>12.3e}",
                r.eps, r.same_mesh, r.at_h, r.at_h2, r.improvement, r.vertex_residual
            );
        }
        worst = worst.max(rep.max_discrepancy());
        reports.push(rep);
    }
    write_json(&common.out, "krein_check.json", &reports)?;
    println!("max relative discrepancy {worst:.3e} (threshold {threshold:.1e})");
    if !(worst <= threshold) {
        return Err(VerificationFailed(format!("discrepancy {worst:.3e} exceeds {threshold:.1e}")).into());
    }
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let sys = common.load()?;
    let zs = common.z_values();
    for (k, z) in zs.iter().enumerate() {
        let cfg = SweepConfig {
            eps: if common.eps.is_empty() { default_eps_grid() } else { common.eps.clone() },
            z: *z,
            mesh: common.mesh(),
            tol0: common.tol0,
            force: common.force,
            series: common.series(),
            opnorm: OpNormOptions { seed: common.seed, ..Default::default() },
        };
        let out = sweep(&sys, &cfg)?;
        let fits = fit_all(&out.records);
        let stem = if zs.len() == 1 { "sweep".to_string() } else { format!("sweep_z{k}") };
        let mut w = create(&common.out, &format!("{stem}.jsonl"))?;
        write_jsonl(&out, &fits, &mut w)?;
        w.flush()?;
        write_csv(&out.records, create(&common.out, &format!("{stem}.csv"))?)?;
        let mut w = create(&common.out, &format!("{stem}.dat"))?;
        write_gnuplot(&out.records, &fits, &mut w)?;
        w.flush()?;

        println!("z = {z}: {} (config {})", out.header.classification.effective, out.header.config_hash);
        println!("{:<18} {:>8} {:>10} {:>7} {:>10}", "block", "slope", "stderr", "points", "dropped");
        for f in &fits {
            let dropped = f.dropped.map_or("-".to_string(), |e| format!("{e:.4}"));
            println!("{:<18} {:>8.3} {:>10.2e} {:>7} {:>10}", f.block, f.slope, f.stderr, f.points, dropped);
        }
        for f in &out.failures {
            eprintln!("warning: ε = {} failed: {}", f.eps, f.message);
        }
        println!("wrote {}.{{jsonl,csv,dat}}", common.out.join(&stem).display());
    }
    Ok(())
}

#[derive(Serialize)]
struct WeylRow {
    n: usize,
    lambda: f64,
    ratio: f64,
    sup: f64,
}

fn cmd_weyl(common: &Common, n_min: usize, n_max: usize, sup_bound: f64) -> Result<()> {
    let sys = common.load()?;
    let eig = auxiliary_spectrum(&sys.unit(), &common.mesh())?;
    let rep = weyl_check(&eig, n_min, n_max)?;
    let mut wr = csv::Writer::from_writer(create(&common.out, "weyl.csv")?);
    for &(n, ratio) in &rep.ratios {
        wr.serialize(WeylRow { n, lambda: eig.values[n], ratio, sup: rep.sup_norms[n] })?;
    }
    wr.flush()?;
    println!("lambda_n / n^2 in [{:.6}, {:.6}] for {} <= n <= {}", rep.band.0, rep.band.1, n_min, n_max);
    println!("max sup |phi_n| = {:.6} (bound {sup_bound})", rep.max_sup);
    if !(rep.band.0 > 0.0) {
        return Err(VerificationFailed(format!("lower ratio {:.3e} is not positive", rep.band.0)).into());
    }
    if !(rep.max_sup <= sup_bound) {
        return Err(VerificationFailed(format!("sup norm {:.4} exceeds {sup_bound}", rep.max_sup)).into());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return EXIT_VERIFY;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Parse(_)) => EXIT_PARSE,
        Some(Error::AmbiguousGap { .. }) => EXIT_AMBIGUOUS,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spectrum { common, modes } => cmd_spectrum(common, *modes),
        Command::Classify { common } => cmd_classify(common),
        Command::KreinCheck { common, inputs, threshold, zero_inputs } => {
            cmd_krein_check(common, *inputs, *threshold, *zero_inputs)
        }
        Command::Sweep { common } => cmd_sweep(common),
        Command::WeylCheck { common, n_min, n_max, sup_bound } => cmd_weyl(common, *n_min, *n_max, *sup_bound),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            if code == EXIT_AMBIGUOUS {
                eprintln!("error: {err:#} (use --force to continue)");
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(code)
        }
    }
}
