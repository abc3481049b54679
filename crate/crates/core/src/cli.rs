//! The `lipcert` command line: `bound`, `verify` and `describe`.
//!
//! `bound` writes CSV with the header `epsilon,scope,method,value,seconds`,
//! where `scope` is a layer index or `net`. Rows are ordered by ε, then by
//! method in the order naive, rbar, nested, lower.
//!
//! Exit codes: 0 success, 1 failed verification, 2 input error, 3 capacity
//! error.

use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bounds::{BoundConfig, DEFAULT_LOWER_SAMPLES, DEFAULT_SPECTRAL_SLACK};
use crate::error::{invalid, Error, Result};
use crate::linops::{LinearMap, LinearOperator};
use crate::network::{
    layer_domain, layer_upper_bound, load_model, lower_bound_layer, lower_bound_network, propagate,
    read_vector, recenter, Layer, Method, NetworkModel,
};
use crate::oracle::{verify_instance, verify_suite, OracleConfig};

pub const CSV_HEADER: &str = "epsilon,scope,method,value,seconds";

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "LIPCERT_THREADS";

/// Model layers whose smaller dimension exceeds this are skipped by
/// `verify --model`; the dense eigensolver is cubic in it.
const VERIFY_MODEL_DIM_CAP: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "lipcert", version, about = "Local Lipschitz bounds for ReLU networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep bounds over a grid of perturbation radii and write CSV.
    Bound(BoundArgs),
    /// Cross-check the bounds against brute-force oracles.
    Verify(VerifyArgs),
    /// Print the layers of a model.
    Describe(DescribeArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("scope").required(true).args(["layer", "net"])))]
pub struct BoundArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Nominal input: a raw little-endian f32 file, or `zeros`.
    #[arg(long, default_value = "zeros")]
    pub x0: String,
    /// `start:stop:scale:points` with scale `log` or `linear`.
    #[arg(long)]
    pub grid: EpsilonGrid,
    /// Comma-separated subset of naive,rbar,nested,lower.
    #[arg(long, default_value = "naive,rbar,nested,lower")]
    pub methods: String,
    /// Bound a single layer.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Bound the whole network by propagation.
    #[arg(long)]
    pub net: bool,
    /// Perturbations drawn for the sampled lower bound.
    #[arg(long, default_value_t = DEFAULT_LOWER_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Relative margin added to every power-iteration estimate.
    #[arg(long, default_value_t = DEFAULT_SPECTRAL_SLACK)]
    pub spectral_slack: f64,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also check every affine-ReLU layer of this model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Radius used for model layers.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_SPECTRAL_SLACK)]
    pub spectral_slack: f64,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScale {
    Log,
    Linear,
}

/// Radii from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub scale: GridScale,
}

impl EpsilonGrid {
    pub fn new(start: f64, stop: f64, points: usize, scale: GridScale) -> Result<Self> {
        if !(start > 0.0 && start.is_finite()) {
            return Err(invalid(format!("grid start must be positive, got {start}")));
        }
        if !(stop >= start && stop.is_finite()) {
            return Err(invalid(format!("grid stop {stop} is below start {start}")));
        }
        if points == 0 {
            return Err(invalid("grid needs at least one point"));
        }
        if points == 1 && stop != start {
            return Err(invalid("a one-point grid needs start == stop"));
        }
        Ok(Self {
            start,
            stop,
            points,
            scale,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start];
        }
        let last = (self.points - 1) as f64;
        let mut v: Vec<f64> = (0..self.points)
            .map(|i| {
                let t = i as f64 / last;
                match self.scale {
                    GridScale::Linear => self.start + t * (self.stop - self.start),
                    GridScale::Log => self.start * (self.stop / self.start).powf(t),
                }
            })
            .collect();
        v[0] = self.start;
        v[self.points - 1] = self.stop;
        for i in 1..v.len() {
            v[i] = v[i].max(v[i - 1]);
        }
        v
    }
}

impl FromStr for EpsilonGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, scale, points] = parts[..] else {
            return Err(invalid(format!("grid {s:?} is not start:stop:scale:points")));
        };
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| invalid(format!("grid value {v:?} is not a number")))
        };
        let scale = match scale {
            "log" => GridScale::Log,
            "linear" => GridScale::Linear,
            _ => return Err(invalid(format!("grid scale {scale:?} is not log or linear"))),
        };
        let points = points
            .parse()
            .map_err(|_| invalid(format!("grid point count {points:?} is not an integer")))?;
        Self::new(num(start)?, num(stop)?, points, scale)
    }
}

/// A CSV method column value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CsvMethod {
    Naive,
    Rbar,
    Nested,
    Lower,
}

impl fmt::Display for CsvMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CsvMethod::Naive => "naive",
            CsvMethod::Rbar => "rbar",
            CsvMethod::Nested => "nested",
            CsvMethod::Lower => "lower",
        })
    }
}

impl CsvMethod {
    fn upper(self) -> Option<Method> {
        match self {
            CsvMethod::Naive => Some(Method::Naive),
            CsvMethod::Rbar => Some(Method::Rbar),
            CsvMethod::Nested => Some(Method::Nested),
            CsvMethod::Lower => None,
        }
    }
}

/// Parses a comma-separated method list into canonical order without repeats.
pub fn parse_methods(list: &str) -> Result<Vec<CsvMethod>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        out.push(match name {
            "lower" => CsvMethod::Lower,
            other => match other.parse::<Method>()? {
                Method::Naive => CsvMethod::Naive,
                Method::Rbar => CsvMethod::Rbar,
                Method::Nested => CsvMethod::Nested,
            },
        });
    }
    if out.is_empty() {
        return Err(invalid("no methods requested"));
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub epsilon: f64,
    pub scope: String,
    pub method: CsvMethod,
    pub value: f64,
    pub seconds: f64,
}

impl fmt::Display for CsvRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{:.6}",
            self.epsilon, self.scope, self.method, self.value, self.seconds
        )
    }
}

fn nominal_input(model: &NetworkModel, spec: &str) -> Result<Vec<f64>> {
    let n = model.input_shape.numel();
    if spec == "zeros" {
        return Ok(vec![0.0; n]);
    }
    let x = read_vector(std::path::Path::new(spec))
        .map_err(|e| invalid(format!("nominal input {spec}: {e}")))?;
    if x.len() != n {
        return Err(invalid(format!(
            "nominal input {spec} has {} values, model input {} needs {n}",
            x.len(),
            model.input_shape
        )));
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("nominal input {spec}: entry {j} is not finite")));
    }
    Ok(x)
}

fn timed(f: impl FnOnce() -> Result<f64>) -> Result<(f64, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

/// Computes the rows of a `bound` invocation.
pub fn bound_rows(args: &BoundArgs) -> Result<Vec<CsvRow>> {
    let model = load_model(&args.model)?;
    let x0 = nominal_input(&model, &args.x0)?;
    let methods = parse_methods(&args.methods)?;
    let cfg = BoundConfig::default().with_slack(args.spectral_slack);
    cfg.validate()?;
    if methods.contains(&CsvMethod::Lower) && args.samples == 0 {
        return Err(invalid("--samples must be positive for the lower bound"));
    }
    let grid = args.grid.values();
    let mut rows = Vec::with_capacity(grid.len() * methods.len());

    match args.layer {
        Some(k) => {
            let layer = model.layers.get(k).ok_or_else(|| {
                invalid(format!("layer {k} out of range; model has {} layers", model.layers.len()))
            })?;
            if !matches!(layer, Layer::Affine { .. }) {
                return Err(invalid(format!(
                    "layer {k} is {}, not an affine layer",
                    layer.kind()
                )));
            }
            let shapes = model.shapes()?;
            let acts = model.activations(&x0)?;
            for &eps in &grid {
                let dom = layer_domain(&model, k, &acts[k], eps)?;
                for &m in &methods {
                    let (value, seconds) = timed(|| match m.upper() {
                        Some(method) => {
                            layer_upper_bound(layer, &shapes[k], &acts[k], &dom, method, &cfg)
                                .map(|(v, _)| v)
                        }
                        None => lower_bound_layer(layer, &acts[k], &dom, args.samples, args.seed),
                    })?;
                    rows.push(CsvRow {
                        epsilon: eps,
                        scope: k.to_string(),
                        method: m,
                        value,
                        seconds,
                    });
                }
            }
        }
        None => {
            for &eps in &grid {
                for &m in &methods {
                    let (value, seconds) = timed(|| match m.upper() {
                        Some(method) => propagate(&model, &x0, eps, method, &cfg).map(|t| t.product_bound),
                        None => lower_bound_network(&model, &x0, eps, args.samples, args.seed),
                    })?;
                    rows.push(CsvRow {
                        epsilon: eps,
                        scope: "net".into(),
                        method: m,
                        value,
                        seconds,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn cmd_bound(args: &BoundArgs, stdout: &mut dyn Write) -> Result<i32> {
    let rows = bound_rows(args)?;
    let mut sink: Box<dyn Write + '_> = match &args.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(stdout),
    };
    writeln!(sink, "{CSV_HEADER}")?;
    for row in &rows {
        writeln!(sink, "{row}")?;
    }
    sink.flush()?;
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let cfg = OracleConfig {
        bounds: BoundConfig::default().with_slack(args.spectral_slack),
        seed: args.seed,
        ..OracleConfig::default()
    };
    cfg.bounds.validate()?;
    let model = args.model.as_ref().map(load_model).transpose()?;
    let mut checked = 0usize;
    let mut failed = 0usize;

    for outcome in verify_suite(args.instances, args.seed, &cfg)? {
        checked += 1;
        let bad: Vec<String> = outcome
            .reports
            .iter()
            .filter(|r| !r.pass)
            .map(|r| format!("{}({} vs {})", r.quantity, r.oracle_value, r.certified_value))
            .collect();
        let status = if bad.is_empty() { "pass".to_string() } else { format!("FAIL {}", bad.join(" ")) };
        failed += usize::from(!bad.is_empty());
        writeln!(
            stdout,
            "instance {} {:?} {}x{} {}",
            outcome.index, outcome.family, outcome.rows, outcome.cols, status
        )?;
    }

    if let Some(model) = &model {
        let x0 = vec![0.0; model.input_shape.numel()];
        let acts = model.activations(&x0)?;
        for (k, layer) in model.layers.iter().enumerate() {
            if !layer.ends_in_relu() {
                continue;
            }
            let aff = recenter(layer, &acts[k])?;
            if aff.op.rows().min(aff.op.cols()) > VERIFY_MODEL_DIM_CAP {
                writeln!(stdout, "layer {k} skipped {}x{}", aff.op.rows(), aff.op.cols())?;
                continue;
            }
            let dom = layer_domain(model, k, &acts[k], args.epsilon)?;
            let reports = match &aff.op {
                LinearOperator::Dense(d) => verify_instance(d, &aff.bias, &dom, &cfg)?,
                LinearOperator::Conv2d(c) => verify_instance(c, &aff.bias, &dom, &cfg)?,
            };
            let ok = reports.iter().all(|r| r.pass);
            checked += 1;
            failed += usize::from(!ok);
            writeln!(stdout, "layer {k} {}", if ok { "pass" } else { "FAIL" })?;
        }
    }
    writeln!(stderr, "{} passed, {failed} failed", checked - failed)?;
    Ok(if failed == 0 { 0 } else { 1 })
}

fn cmd_describe(args: &DescribeArgs, stdout: &mut dyn Write) -> Result<i32> {
    let model = load_model(&args.model)?;
    let shapes = model.shapes()?;
    writeln!(
        stdout,
        "model {} input {} layers {}",
        model.name,
        model.input_shape,
        model.layers.len()
    )?;
    for (k, layer) in model.layers.iter().enumerate() {
        let dims = match layer {
            Layer::Affine { op, .. } => format!("{}x{}", op.rows(), op.cols()),
            _ => "-".into(),
        };
        writeln!(
            stdout,
            "layer {k} {} in {} out {} params {} op {dims} {}",
            layer.kind(),
            shapes[k],
            shapes[k + 1],
            layer.parameter_count(),
            layer.label()
        )?;
    }
    Ok(0)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Capacity { .. } => 3,
        _ => 2,
    }
}

/// Runs the command line against explicit streams and returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Bound(a) => cmd_bound(a, stdout),
        Command::Verify(a) => cmd_verify(a, stdout, stderr),
        Command::Describe(a) => cmd_describe(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Sizes the global thread pool from `LIPCERT_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| invalid(e.to_string()))
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    if let Err(e) = init_threads() {
        let _ = writeln!(stderr.lock(), "error: {e}");
        return 2;
    }
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
