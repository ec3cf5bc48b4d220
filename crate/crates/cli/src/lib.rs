use std::fmt::Display;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::ffi::OsString;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pix::costmodel::{
    module_cost, network_flops, network_params, primitive_flops, ModuleKind, NetworkSpec, PixMode,
    PixSubstitution, PrimitiveKind, BUNDLED_NETWORKS,
};
use pix::nn::{build_network, load_cifar10, train, Arch, TrainConfig};
use pix::pix::gradcheck::{check_pix_gradients, GradCheckOptions};
use pix::pix::{fuse, gca, partition_channels, pix_forward};
use pix::tensor::{random_tensor, read_pxt, write_pxt, Distribution};
use pix::{Activation, Dims, OpMode, PixConfig, PixParams, RngSeed, Tensor};

const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "pix", version, about = "Pick-or-Mix channel sampling: cost analysis, operator, training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// FLOPs and memory of one attention/sampling module.
    Cost(CostArgs),
    /// FLOPs and parameters of a network spec, optionally with PiX.
    NetworkCost(NetworkCostArgs),
    /// Run the PiX forward pass on PXT tensors.
    Fuse(FuseArgs),
    /// Finite-difference check of the PiX backward pass.
    Gradcheck(GradcheckArgs),
    /// Train a tiny network on CIFAR-10.
    Train(TrainArgs),
    /// Time an operator and report its analytic FLOPs.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModuleArg {
    Se,
    Cbam,
    Fbs,
    Pix,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, value_enum)]
    module: ModuleArg,
    #[arg(long)]
    channels: u64,
    #[arg(long)]
    height: u64,
    #[arg(long)]
    width: u64,
    #[arg(long, default_value_t = 1)]
    zeta: u64,
    /// Channels kept by FBS.
    #[arg(long, default_value_t = 1)]
    topk: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct NetworkCostArgs {
    /// Spec file, or the name of a bundled network.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    pix_zeta: Option<u64>,
    #[arg(long, default_value = "squeeze")]
    mode: PixMode,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    input: PathBuf,
    /// Predictor weights, dims (1,1,S,C).
    #[arg(long)]
    theta: PathBuf,
    /// Predictor bias, dims (1,1,1,S).
    #[arg(long)]
    beta: PathBuf,
    #[arg(long)]
    zeta: usize,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value = "pick-or-mix")]
    mode: OpMode,
    #[arg(long, default_value = "sigmoid")]
    activation: Activation,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    channels: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    zeta: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value = "pick-or-mix")]
    mode: OpMode,
    #[arg(long, default_value = "sigmoid")]
    activation: Activation,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding data_batch_{1..5}.bin.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    zeta: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f32,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    momentum: f32,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().seed.0)]
    seed: u64,
    /// Use only the first n training images.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value = "tiny_pixnet")]
    arch: Arch,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchOp {
    Fuse,
    Gca,
    Conv,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    op: BenchOp,
    /// Comma-separated CxHxW sizes.
    #[arg(long, default_value = "512x28x28,512x56x56")]
    sizes: String,
    #[arg(long, default_value_t = 25)]
    reps: usize,
    #[arg(long, default_value_t = 4)]
    zeta: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<pix::Error> for Failure {
    fn from(e: pix::Error) -> Self {
        match e {
            pix::Error::Param(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return e.exit_code() as u8;
        }
    };
    let mut io = Streams { out, err };
    let result = match cli.command {
        Command::Cost(a) => cmd_cost(a, &mut io),
        Command::NetworkCost(a) => cmd_network_cost(a, &mut io),
        Command::Fuse(a) => cmd_fuse(a, &mut io),
        Command::Gradcheck(a) => cmd_gradcheck(a, &mut io),
        Command::Train(a) => cmd_train(a, &mut io),
        Command::Bench(a) => cmd_bench(a, &mut io),
    };
    let (code, msg) = match result {
        Ok(()) => return 0,
        Err(Failure::Usage(msg)) => (2, msg),
        Err(Failure::Runtime(msg)) => (1, msg),
    };
    let _ = writeln!(io.err, "error: {msg}");
    code
}

struct Streams<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

fn human(n: u64) -> String {
    let v = n as f64;
    if v >= 1e9 {
        format!("{:.3}B", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.3}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.3}K", v / 1e3)
    } else {
        n.to_string()
    }
}

fn csv_out(out: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(out)
}

/// Prints rows with each column padded to its widest cell.
fn print_table(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>, out: &mut dyn Write| -> io::Result<()> {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        writeln!(out, "{}", padded.join("  ").trim_end())
    };
    line(header.to_vec(), out)?;
    for row in rows {
        line(row.iter().map(String::as_str).collect(), out)?;
    }
    Ok(())
}

fn cmd_cost(a: CostArgs, io: &mut Streams) -> CliResult {
    if a.channels == 0 || a.height == 0 || a.width == 0 {
        return usage("channels, height and width must be positive");
    }
    let module = match a.module {
        ModuleArg::Se => ModuleKind::Se,
        ModuleArg::Cbam => ModuleKind::Cbam,
        ModuleArg::Fbs => ModuleKind::Fbs { k: a.topk },
        ModuleArg::Pix => ModuleKind::Pix { zeta: a.zeta },
    };
    if a.module == ModuleArg::Pix && !(1..=a.channels).contains(&a.zeta) {
        return usage(format!("--zeta must lie in 1..={}", a.channels));
    }
    if a.module == ModuleArg::Fbs && !(1..=a.channels).contains(&a.topk) {
        return usage(format!("--topk must lie in 1..={}", a.channels));
    }
    let report = module_cost(module, a.channels, a.height, a.width)?;
    match a.format {
        Format::Csv => {
            let mut w = csv_out(&mut *io.out);
            w.write_record(["label", "flops", "bytes"])?;
            for t in &report.breakdown {
                w.write_record([t.label.clone(), t.flops.to_string(), t.bytes().to_string()])?;
            }
            w.write_record(["total".to_string(), report.total_flops.to_string(), report.memory_bytes().to_string()])?;
            w.flush()?;
        }
        Format::Table => {
            writeln!(io.out, "{module} at {}x{}x{}", a.channels, a.height, a.width)?;
            let rows: Vec<Vec<String>> = report
                .breakdown
                .iter()
                .map(|t| vec![t.label.clone(), t.flops.to_string(), t.bytes().to_string()])
                .collect();
            print_table(&mut *io.out, &["term", "flops", "bytes"], &rows)?;
            writeln!(io.out, "total: {} FLOPs ({}), {} MB", report.total_flops, human(report.total_flops), report.megabytes_string())?;
        }
    }
    Ok(())
}

fn load_spec(spec: &str) -> CliResult<NetworkSpec> {
    let path = Path::new(spec);
    if !path.exists() && BUNDLED_NETWORKS.iter().any(|(name, _)| *name == spec) {
        return Ok(NetworkSpec::bundled(spec)?);
    }
    NetworkSpec::load(path).map_err(|e| Failure::Runtime(e.to_string()))
}

fn cmd_network_cost(a: NetworkCostArgs, io: &mut Streams) -> CliResult {
    let spec = load_spec(&a.spec)?;
    if a.pix_zeta == Some(0) {
        return usage("--pix-zeta must be at least 1");
    }
    let base_flops = network_flops(&spec, None)?;
    let base_params = network_params(&spec, None)?;
    let base_total = base_flops.total_flops;
    let mut rows = vec![("baseline".to_string(), base_flops, base_params, None)];
    if let Some(zeta) = a.pix_zeta {
        let sub = PixSubstitution { zeta, mode: a.mode };
        let flops = network_flops(&spec, Some(sub))?;
        let params = network_params(&spec, Some(sub))?;
        let reduction = 100.0 * (1.0 - flops.total_flops as f64 / base_total as f64);
        rows.push((format!("pix-{}-zeta{zeta}", a.mode), flops, params, Some(reduction)));
    }
    match a.format {
        Format::Csv => {
            let mut w = csv_out(&mut *io.out);
            w.write_record(["network", "variant", "flops", "params", "reduction_percent"])?;
            for (variant, report, params, red) in &rows {
                w.write_record([
                    spec.name.clone(),
                    variant.clone(),
                    report.total_flops.to_string(),
                    params.to_string(),
                    red.map(|r| format!("{r:.2}")).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
        }
        Format::Table => {
            for (variant, report, params, _) in &rows {
                writeln!(io.out, "{} {variant}: {} FLOPs, {} params", spec.name, human(report.total_flops), params)?;
                let cells: Vec<Vec<String>> = report
                    .breakdown
                    .iter()
                    .map(|t| vec![t.label.clone(), t.flops.to_string(), human(t.flops)])
                    .collect();
                print_table(&mut *io.out, &["layer type", "flops", ""], &cells)?;
            }
            if let [(_, base, _, _), (_, pixed, _, Some(red))] = rows.as_slice() {
                writeln!(io.out, "{} -> {} (-{red:.1}%)", human(base.total_flops), human(pixed.total_flops))?;
            }
        }
    }
    Ok(())
}

fn expect_dims(what: &str, path: &Path, actual: Dims, expected: Dims) -> CliResult {
    if actual != expected {
        return Err(Failure::Runtime(format!(
            "{what} {}: expected dims {expected}, got {actual}",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_fuse(a: FuseArgs, io: &mut Streams) -> CliResult {
    if a.zeta == 0 {
        return usage("--zeta must be at least 1");
    }
    if !(0.0..=1.0).contains(&a.tau) {
        return usage("--tau must lie in [0, 1]");
    }
    let x = read_pxt(&a.input)?;
    let theta = read_pxt(&a.theta)?;
    let beta = read_pxt(&a.beta)?;
    let d = x.dims();
    if a.zeta > d.c {
        return usage(format!("--zeta {} exceeds the {} input channels", a.zeta, d.c));
    }
    let cfg = PixConfig::new(a.zeta)
        .with_tau(a.tau)
        .with_mode(a.mode)
        .with_activation(a.activation);
    let subsets = cfg.out_channels(d.c);
    expect_dims("theta", &a.theta, theta.dims(), Dims::new(1, 1, subsets, d.c))?;
    expect_dims("beta", &a.beta, beta.dims(), Dims::new(1, 1, 1, subsets))?;
    let params = PixParams::from_parts(d.c, subsets, theta.into_data(), beta.into_data())?;
    let outputs = (0..d.n)
        .map(|n| pix_forward(&x.sample_tensor(n), &params, &cfg).map(|(y, _)| y))
        .collect::<Result<Vec<_>, _>>()?;
    let y = if outputs.is_empty() {
        Tensor::zeros(Dims::new(0, subsets, d.h, d.w))
    } else {
        Tensor::stack(&outputs)?
    };
    write_pxt(&y, &a.output)?;
    writeln!(io.err, "wrote {} with dims {}", a.output.display(), y.dims())?;
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, io: &mut Streams) -> CliResult {
    if a.channels == 0 || a.height == 0 || a.width == 0 {
        return usage("channels, height and width must be positive");
    }
    if a.zeta == 0 || a.zeta > a.channels {
        return usage(format!("--zeta must lie in 1..={}", a.channels));
    }
    if a.trials == 0 {
        return usage("--trials must be at least 1");
    }
    let cfg = PixConfig::new(a.zeta)
        .with_tau(a.tau)
        .with_mode(a.mode)
        .with_activation(a.activation);
    let opts = GradCheckOptions::new(a.channels, a.height, a.width, cfg);
    let mut w = csv_out(&mut *io.out);
    w.write_record(["trial", "dx", "dtheta", "dbeta", "max", "result"])?;
    let mut worst: f64 = 0.0;
    for trial in 0..a.trials {
        let report = check_pix_gradients(&opts, RngSeed(a.seed).derive(trial))?;
        worst = worst.max(report.max_error());
        let result = if report.passes(GRADCHECK_TOLERANCE) { "pass" } else { "fail" };
        w.write_record([
            trial.to_string(),
            format!("{:.3e}", report.dx),
            format!("{:.3e}", report.dtheta),
            format!("{:.3e}", report.dbeta),
            format!("{:.3e}", report.max_error()),
            result.to_string(),
        ])?;
    }
    w.flush()?;
    if worst <= GRADCHECK_TOLERANCE {
        writeln!(io.err, "pass: max relative error {worst:.3e} <= {GRADCHECK_TOLERANCE:e}")?;
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "fail: max relative error {worst:.3e} > {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

fn cmd_train(a: TrainArgs, io: &mut Streams) -> CliResult {
    if a.epochs == 0 || a.batch_size == 0 {
        return usage("--epochs and --batch-size must be positive");
    }
    if a.limit == Some(0) {
        return usage("--limit must be positive");
    }
    if !(a.lr.is_finite() && a.lr > 0.0) {
        return usage("--lr must be positive");
    }
    let mut data = load_cifar10(&a.data)?;
    if let Some(limit) = a.limit {
        data = data.take(limit);
    }
    let seed = RngSeed(a.seed);
    let mut model = build_network(a.arch, &PixConfig::new(a.zeta), seed.derive(0))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        momentum: a.momentum,
        seed: seed.derive(1),
    };
    let log = train(&mut model, &data, &cfg)?;
    let mut w = csv_out(&mut *io.out);
    w.write_record(["epoch", "loss", "accuracy"])?;
    for rec in &log {
        w.write_record([rec.epoch.to_string(), format!("{:.6}", rec.loss), format!("{:.6}", rec.accuracy)])?;
    }
    w.flush()?;
    if let Some(last) = log.last() {
        writeln!(io.err, "final train accuracy: {:.4} on {} images", last.accuracy, data.len())?;
    }
    Ok(())
}

fn parse_size(s: &str) -> Option<(usize, usize, usize)> {
    let parts: Vec<usize> = s.trim().split('x').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    match parts.as_slice() {
        &[c, h, w] if c > 0 && h > 0 && w > 0 => Some((c, h, w)),
        _ => None,
    }
}

fn median_ns(reps: usize, mut f: impl FnMut() -> pix::Result<()>) -> pix::Result<u128> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_nanos());
    }
    times.sort_unstable();
    Ok(times[times.len() / 2])
}

fn cmd_bench(a: BenchArgs, io: &mut Streams) -> CliResult {
    if a.reps == 0 {
        return usage("--reps must be at least 1");
    }
    let sizes = a
        .sizes
        .split(',')
        .map(|s| parse_size(s).ok_or_else(|| Failure::Usage(format!("bad size `{s}` (expected CxHxW)"))))
        .collect::<CliResult<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, &(c, h, w)) in sizes.iter().enumerate() {
        if a.zeta == 0 || a.zeta > c {
            return usage(format!("--zeta must lie in 1..={c}"));
        }
        let seed = RngSeed(a.seed).derive(i as u64);
        let x: Tensor<f32> = random_tensor((1, c, h, w), seed, Distribution::Normal);
        let (cu, hu, wu, zu) = (c as u64, h as u64, w as u64, a.zeta as u64);
        let (flops, median) = match a.op {
            BenchOp::Fuse => {
                let cfg = PixConfig::new(a.zeta);
                let part = partition_channels(c, a.zeta)?;
                let p: Vec<f32> = random_tensor((1, 1, 1, part.len()), seed.derive(1), Distribution::Uniform).into_data();
                let flops = primitive_flops(PrimitiveKind::ChannelSampling { c: cu, h: hu, w: wu, zeta: zu });
                (flops, median_ns(a.reps, || fuse(&x, &p, &part, &cfg).map(drop))?)
            }
            BenchOp::Gca => {
                let flops = primitive_flops(PrimitiveKind::GlobalPool { c: cu, h: hu, w: wu });
                (flops, median_ns(a.reps, || gca(&x).map(drop))?)
            }
            BenchOp::Conv => {
                let out = c.div_ceil(a.zeta);
                let mut rng = pix::Prng::new(seed.derive(2));
                let conv = pix::nn::Conv2d::<f32>::he_uniform(c, out, 1, 1, 0, false, &mut rng);
                let flops = primitive_flops(PrimitiveKind::Conv {
                    kernels: out as u64,
                    in_channels: cu,
                    k: 1,
                    height: hu,
                    width: wu,
                });
                (flops, median_ns(a.reps, || conv.forward(&x).map(drop))?)
            }
        };
        let gflops = flops as f64 / median.max(1) as f64;
        rows.push(vec![
            op_name(a.op).to_string(),
            c.to_string(),
            h.to_string(),
            w.to_string(),
            a.zeta.to_string(),
            a.reps.to_string(),
            median.to_string(),
            flops.to_string(),
            format!("{gflops:.3}"),
        ]);
    }
    let header = ["op", "channels", "height", "width", "zeta", "reps", "median_ns", "flops", "gflop_per_s"];
    match a.format {
        Format::Csv => {
            let mut w = csv_out(&mut *io.out);
            w.write_record(header)?;
            for r in &rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Format::Table => print_table(&mut *io.out, &header, &rows)?,
    }
    Ok(())
}

fn op_name(op: BenchOp) -> impl Display {
    match op {
        BenchOp::Fuse => "fuse",
        BenchOp::Gca => "gca",
        BenchOp::Conv => "conv",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn invoke(args: &[&str]) -> (u8, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("pix").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    fn path_arg(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn exit_codes() {
        assert_eq!(invoke(&["cost", "--module", "pix", "--channels", "8", "--height", "4", "--width", "4"]).0, 0);
        assert_eq!(invoke(&["cost", "--module", "nope", "--channels", "8", "--height", "4", "--width", "4"]).0, 2);
        assert_eq!(invoke(&["cost", "--module", "pix", "--channels", "8", "--height", "4", "--width", "4", "--zeta", "0"]).0, 2);
        assert_eq!(invoke(&["gradcheck", "--channels", "8", "--height", "3", "--width", "3", "--zeta", "9"]).0, 2);
        assert_eq!(invoke(&["network-cost", "--spec", "resnet50", "--pix-zeta", "3"]).0, 2);
        assert_eq!(invoke(&["frobnicate"]).0, 2);
        let (code, out, _) = invoke(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("network-cost"));
    }

    #[test]
    fn malformed_spec_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let spec = dir.path().join("bad.spec");
        std::fs::write(&spec, "name tiny\ninput 3 8 8\nconv what\n").unwrap();
        let (code, _, err) = invoke(&["network-cost", "--spec", path_arg(&spec)]);
        assert_ne!(code, 0);
        assert!(err.contains("line"), "{err}");
        let (code, _, _) = invoke(&["network-cost", "--spec", path_arg(&dir.path().join("missing"))]);
        assert_ne!(code, 0);
    }

    #[test]
    fn cost_total_row() {
        let (_, out, _) = invoke(&["cost", "--module", "pix", "--channels", "512", "--height", "112", "--width", "112"]);
        assert_eq!(out.lines().last().unwrap(), "total,6686720,25694208");
    }

    fn write_params(dir: &Path, c: usize, zeta: usize, theta: f32, beta: f32) -> (PathBuf, PathBuf) {
        let s = c.div_ceil(zeta);
        let (tp, bp) = (dir.join("theta.pxt"), dir.join("beta.pxt"));
        write_pxt(&Tensor::from_fn((1, 1, s, c), |_, _, _, _| theta), &tp).unwrap();
        write_pxt(&Tensor::from_fn((1, 1, 1, s), |_, _, _, _| beta), &bp).unwrap();
        (tp, bp)
    }

    #[test]
    fn fuse_shapes_and_gating() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("x.pxt");
        let output = dir.path().join("y.pxt");
        let x: Tensor<f32> = random_tensor((1, 12, 5, 5), RngSeed(3), Distribution::Normal);
        write_pxt(&x, &input).unwrap();

        let (tp, bp) = write_params(dir.path(), 12, 4, 0.1, 0.0);
        let args = ["fuse", "--input", path_arg(&input), "--theta", path_arg(&tp), "--beta", path_arg(&bp), "--zeta", "4", "--output", path_arg(&output)];
        assert_eq!(invoke(&args).0, 0);
        assert_eq!(read_pxt(&output).unwrap().dims(), Dims::new(1, 3, 5, 5));

        let (tp, bp) = write_params(dir.path(), 12, 1, 0.0, 0.0);
        let args = ["fuse", "--input", path_arg(&input), "--theta", path_arg(&tp), "--beta", path_arg(&bp), "--zeta", "1", "--output", path_arg(&output)];
        assert_eq!(invoke(&args).0, 0);
        assert_eq!(read_pxt(&output).unwrap(), x.scale(0.5));

        // parameters sized for ζ=1 but run with ζ=4
        let args = ["fuse", "--input", path_arg(&input), "--theta", path_arg(&tp), "--beta", path_arg(&bp), "--zeta", "4", "--output", path_arg(&output)];
        let (code, _, err) = invoke(&args);
        assert_eq!(code, 1);
        assert!(err.contains("expected dims (1,1,3,12), got (1,1,12,12)"), "{err}");

        let missing = dir.path().join("none.pxt");
        let args = ["fuse", "--input", path_arg(&missing), "--theta", path_arg(&tp), "--beta", path_arg(&bp), "--zeta", "1", "--output", path_arg(&output)];
        assert_eq!(invoke(&args).0, 1);
    }

    #[test]
    fn repeated_invocations_are_identical() {
        for args in [
            &["gradcheck", "--channels", "8", "--height", "3", "--width", "3", "--zeta", "3", "--trials", "3", "--seed", "4"][..],
            &["network-cost", "--spec", "resnet101", "--pix-zeta", "4", "--format", "table"],
            &["cost", "--module", "fbs", "--channels", "256", "--height", "56", "--width", "56", "--topk", "4"],
        ] {
            let first = invoke(args);
            assert_eq!(first.0, 0, "{}", first.2);
            assert_eq!(first, invoke(args));
        }
    }

    #[test]
    fn bench_flops_match_cost_model() {
        let (code, out, _) = invoke(&["bench", "--op", "fuse", "--sizes", "64x8x8,32x4x4", "--reps", "3", "--zeta", "4"]);
        assert_eq!(code, 0);
        let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 2);
        for (row, (c, h, w)) in rows.iter().zip([(64, 8, 8), (32, 4, 4)]) {
            let want = primitive_flops(PrimitiveKind::ChannelSampling { c, h, w, zeta: 4 });
            assert_eq!(row[7], want.to_string());
            assert!(row[6].parse::<u128>().unwrap() > 0);
        }
        assert_eq!(invoke(&["bench", "--op", "gca", "--sizes", "8x8"]).0, 2);
    }

    #[test]
    fn train_smoke_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for i in 0..12u8 {
            bytes.push(i % 10);
            bytes.extend((0..3072u32).map(|k| (k as u8).wrapping_mul(i.wrapping_add(1))));
        }
        std::fs::write(dir.path().join("data_batch_1.bin"), &bytes).unwrap();
        let args = ["train", "--data", path_arg(dir.path()), "--limit", "10", "--epochs", "1"];
        let (code, out, err) = invoke(&args);
        assert_eq!(code, 0, "{err}");
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "epoch,loss,accuracy");
        let loss: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert!(loss.is_finite());
        assert_eq!(invoke(&args).1, out);

        let empty = tempfile::tempdir().unwrap();
        let (code, _, err) = invoke(&["train", "--data", path_arg(empty.path())]);
        assert_eq!(code, 1);
        assert!(err.contains("data_batch_1.bin"), "{err}");
    }
}
