//! `pcnet`: run experiments, export datasets and analyse them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcnet_core::analysis::{self, Summary};
use pcnet_core::dataset::{self, format_f64, Dataset};
use pcnet_core::ensemble::{self, Catalogs, ExperimentConfig, Quantity, RuleSetting};
use pcnet_core::rules::{Driver, RuleKind};
use pcnet_core::{BernoulliScheme, EmergentNetwork, Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "pcnet", version, about = "Charge-conserving qubit-network circuit experiments")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the ensemble described by a config file and write a dataset.
    Run {
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Late-window summary of a dataset, optionally against a baseline.
    Analyze {
        dataset: PathBuf,
        #[command(flatten)]
        window: WindowArg,
        /// Dataset to compare with; writes `delta.csv`.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Defaults to `<dataset>/summary.json`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Edge and matching frequencies of the constrained layers.
    Emergent {
        dataset: PathBuf,
        /// Defaults to `<dataset>/emergent.json`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replay a config with layers drawn i.i.d. from an emergent network.
    Bernoulli {
        emergent: PathBuf,
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a config at several sizes and fit `a exp(-b N) + c`.
    Scan {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "6,8,10,12")]
        sizes: Vec<usize>,
        /// Rules to scan; defaults to the config's rule.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<RuleKind>,
        /// z, tau_z, w_ex, dw_ex, non_cp, D_total, T_total, C_total, clustering or disparity.
        #[arg(long, default_value = "z")]
        quantity: String,
        /// Scan the mean instead of the per-member standard deviation.
        #[arg(long)]
        mean: bool,
        #[command(flatten)]
        window: WindowArg,
        #[arg(short, long, default_value = "scan.csv")]
        output: PathBuf,
    },
    /// Uncentered PCA of the z vectors of one or more datasets, with hull volumes.
    Pca {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[command(flatten)]
        window: WindowArg,
        /// Projected components written out.
        #[arg(long, default_value_t = 3)]
        components: usize,
        #[arg(long, default_value_t = analysis::VARIANCE_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = analysis::DEFAULT_JITTER)]
        sigma: f64,
        #[arg(long)]
        centered: bool,
        /// Projections go to `<prefix>.csv`, hulls to `<prefix>_hull.csv`.
        #[arg(short, long, default_value = "pca")]
        output: PathBuf,
    },
}

#[derive(Args)]
struct WindowArg {
    /// Inclusive layer window `from:to`; defaults to the last 40% of layers.
    #[arg(long)]
    window: Option<String>,
}

impl WindowArg {
    fn resolve(&self, total_layers: usize) -> Result<(usize, usize)> {
        match &self.window {
            None => Ok((total_layers * 3 / 5, total_layers)),
            Some(w) => {
                let parsed = w
                    .split_once(':')
                    .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
                parsed.ok_or_else(|| Error::Config(format!("window {w:?} is not of the form from:to")))
            }
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invariant(_) => 4,
        e if e.is_io_error() => 3,
        e if e.is_input_error() => 2,
        _ => 1,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_config(path: &Path, output: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn cmd_run(config: &Path, output: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config, output)?;
    if cfg.rule == RuleSetting::Bernoulli {
        return Err(Error::Config(
            "rule = \"bernoulli\" runs through `pcnet bernoulli <emergent.json> <config>`".into(),
        ));
    }
    execute(&cfg, &cfg.driver(None)?)
}

fn execute(cfg: &ExperimentConfig, driver: &Driver) -> Result<()> {
    log::info!("{} members, {} layers, N = {}", cfg.ensemble_size, cfg.total_layers, cfg.n_qubits);
    let (meta, _) = dataset::run_experiment(cfg, driver)?;
    println!(
        "wrote {} members to {} (pbar {:.6}, tau_bar {:.6})",
        meta.members,
        cfg.output_dir.display(),
        meta.pbar,
        meta.tau_bar
    );
    Ok(())
}

fn summarize(ds: &Dataset, window: (usize, usize)) -> Result<Summary> {
    let mut rng = ensemble::trial_rng(ds.meta.seed, usize::MAX);
    analysis::summarize(&ds.records, window, &mut rng)
}

fn cmd_analyze(dir: &Path, window: &WindowArg, baseline: Option<&Path>, output: Option<PathBuf>) -> Result<()> {
    let ds = dataset::read_dataset(dir)?;
    let w = window.resolve(ds.meta.total_layers)?;
    let summary = summarize(&ds, w)?;
    let out = output.unwrap_or_else(|| dir.join("summary.json"));
    write_json(&out, &summary)?;
    println!("wrote {}", out.display());
    if let Some(base) = baseline {
        let bds = dataset::read_dataset(base)?;
        let rows = analysis::delta_table(&summary, &summarize(&bds, w)?);
        let path = out.with_file_name("delta.csv");
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        writeln!(f, "#schema=pcnet.delta.v1")?;
        writeln!(f, "key,value,baseline,delta")?;
        let cell = |x: Option<f64>| x.map(format_f64).unwrap_or_default();
        for r in rows {
            writeln!(f, "{},{},{},{}", r.key, cell(r.value), cell(r.baseline), cell(r.delta))?;
        }
        f.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_emergent(dir: &Path, output: Option<PathBuf>) -> Result<()> {
    let ds = dataset::read_dataset(dir)?;
    let catalogs = Catalogs::new(ds.meta.n_qubits, ds.meta.connectivity.parse()?)?;
    let lists: Vec<Vec<usize>> = ds.records.iter().map(|r| r.constrained_matchings()).collect();
    let net = EmergentNetwork::accumulate(&catalogs.coupling, lists.iter().map(Vec::as_slice))?;
    if net.layers_observed == 0 {
        return Err(Error::EmptyEmergent);
    }
    let out = output.unwrap_or_else(|| dir.join("emergent.json"));
    fs::write(&out, net.to_json()? + "\n")?;
    println!("wrote {} ({} layers)", out.display(), net.layers_observed);
    Ok(())
}

fn cmd_bernoulli(emergent: &Path, config: &Path, output: Option<PathBuf>) -> Result<()> {
    let net = EmergentNetwork::from_json(&fs::read_to_string(emergent)?)?;
    let mut cfg = load_config(config, output)?;
    if net.n_qubits != cfg.n_qubits || net.connectivity.is_some_and(|c| c != cfg.connectivity) {
        return Err(Error::Config(format!(
            "emergent network ({} qubits, {:?}) does not match the config ({} qubits, {})",
            net.n_qubits, net.connectivity, cfg.n_qubits, cfg.connectivity
        )));
    }
    let catalogs = Catalogs::new(cfg.n_qubits, cfg.connectivity)?;
    net.check_consistency(&catalogs.coupling)?;
    cfg.rule = RuleSetting::Bernoulli;
    execute(&cfg, &cfg.driver(Some(BernoulliScheme::from_emergent(&net)?))?)
}

fn parse_quantity(name: &str) -> Result<Quantity> {
    Quantity::ALL
        .into_iter()
        .find(|q| q.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown quantity {name:?}")))
}

#[derive(Serialize)]
struct FitReport {
    rule: String,
    quantity: String,
    fit: Option<analysis::ExpFit>,
    error: Option<String>,
}

fn cmd_scan(
    config: &Path,
    sizes: &[usize],
    rules: &[RuleKind],
    quantity: &str,
    use_mean: bool,
    window: &WindowArg,
    output: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let q = parse_quantity(quantity)?;
    let w = window.resolve(cfg.total_layers)?;
    let rules: Vec<RuleKind> = if rules.is_empty() {
        match cfg.rule {
            RuleSetting::Rule(r) => vec![r],
            RuleSetting::Bernoulli => return Err(Error::Config("size scans need an update rule".into())),
        }
    } else {
        rules.to_vec()
    };
    let mut f = std::io::BufWriter::new(fs::File::create(output)?);
    writeln!(f, "#schema=pcnet.scan.v1")?;
    writeln!(f, "rule,n_qubits,quantity,mean,std,member_std")?;
    let mut fits = Vec::new();
    for rule in rules {
        let points = analysis::size_scan(&cfg, sizes, &Driver::Rule(rule), q, w)?;
        for p in &points {
            writeln!(
                f,
                "{rule},{},{},{},{},{}",
                p.n_qubits,
                q.name(),
                format_f64(p.stats.mean),
                format_f64(p.stats.std),
                format_f64(p.stats.member_std)
            )?;
        }
        let x: Vec<f64> = points.iter().map(|p| p.n_qubits as f64).collect();
        let y: Vec<f64> = points
            .iter()
            .map(|p| if use_mean { p.stats.mean } else { p.stats.member_std })
            .collect();
        let (fit, error) = match analysis::exponential_fit(&x, &y) {
            Ok(fit) => (Some(fit), None),
            Err(e) => (None, Some(e.to_string())),
        };
        fits.push(FitReport {
            rule: rule.to_string(),
            quantity: q.name().to_string(),
            fit,
            error,
        });
    }
    f.flush()?;
    let fit_path = output.with_extension("fit.json");
    write_json(&fit_path, &fits)?;
    println!("wrote {} and {}", output.display(), fit_path.display());
    Ok(())
}

#[derive(Serialize)]
struct PcaReport {
    centered: bool,
    window: (usize, usize),
    eigenvalues: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    components_for_threshold: usize,
    threshold: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_pca(
    dirs: &[PathBuf],
    window: &WindowArg,
    m: usize,
    threshold: f64,
    sigma: f64,
    centered: bool,
    prefix: &Path,
) -> Result<()> {
    let sets: Vec<Dataset> = dirs.iter().map(|d| dataset::read_dataset(d)).collect::<Result<_>>()?;
    let total = sets.iter().map(|d| d.meta.total_layers).min().unwrap_or(0);
    let w = window.resolve(total)?;
    let mut labels = Vec::new();
    let mut blocks = Vec::new();
    for ds in &sets {
        ensemble::check_window(&ds.records, w)?;
        let mut rng = ensemble::trial_rng(ds.meta.seed, usize::MAX);
        let rows: Vec<Vec<f64>> = ds
            .records
            .iter()
            .flat_map(|r| r.layers[w.0..=w.1].iter().map(|l| l.z.clone()))
            .collect();
        for r in &ds.records {
            labels.extend((w.0..=w.1).map(|l| (ds.dir.display().to_string(), r.trial, l)));
        }
        blocks.push(analysis::jitter(&rows, sigma, &mut rng)?);
    }
    let all: Vec<Vec<f64>> = blocks.iter().flatten().cloned().collect();
    let model = analysis::pca_fit(&all, centered)?;
    let m = m.clamp(1, model.dim());
    let coords = model.project(&all, m)?;

    let csv_path = prefix.with_extension("csv");
    let mut f = std::io::BufWriter::new(fs::File::create(&csv_path)?);
    writeln!(f, "#schema=pcnet.pca.v1")?;
    let pcs: Vec<String> = (1..=m).map(|k| format!("pc{k}")).collect();
    writeln!(f, "dataset,trial,layer,{}", pcs.join(","))?;
    for ((name, trial, layer), c) in labels.iter().zip(&coords) {
        let cells: Vec<String> = c.iter().map(|&v| format_f64(v)).collect();
        writeln!(f, "{name},{trial},{layer},{}", cells.join(","))?;
    }
    f.flush()?;

    let hull_path = PathBuf::from(format!("{}_hull.csv", prefix.display()));
    let mut h = std::io::BufWriter::new(fs::File::create(&hull_path)?);
    writeln!(h, "#schema=pcnet.hull.v1")?;
    writeln!(h, "dataset,components,dim,volume,n_points,projected")?;
    let needed = model.n_components_for_variance(threshold);
    for (ds, rows) in sets.iter().zip(&blocks) {
        let (_, hull) = analysis::pca_hull(&model, rows, threshold)?;
        writeln!(
            h,
            "{},{needed},{},{},{},{}",
            ds.dir.display(),
            hull.dim,
            format_f64(hull.volume),
            hull.n_points,
            u8::from(hull.projected)
        )?;
    }
    h.flush()?;

    let report = PcaReport {
        centered,
        window: w,
        explained_variance_ratio: model.explained_variance_ratio(),
        eigenvalues: model.eigenvalues.clone(),
        components_for_threshold: needed,
        threshold,
    };
    let json_path = prefix.with_extension("json");
    write_json(&json_path, &report)?;
    println!("wrote {}, {} and {}", csv_path.display(), hull_path.display(), json_path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => cmd_run(&config, output),
        Command::Analyze {
            dataset,
            window,
            baseline,
            output,
        } => cmd_analyze(&dataset, &window, baseline.as_deref(), output),
        Command::Emergent { dataset, output } => cmd_emergent(&dataset, output),
        Command::Bernoulli {
            emergent,
            config,
            output,
        } => cmd_bernoulli(&emergent, &config, output),
        Command::Scan {
            config,
            sizes,
            rules,
            quantity,
            mean,
            window,
            output,
        } => cmd_scan(&config, &sizes, &rules, &quantity, mean, &window, &output),
        Command::Pca {
            datasets,
            window,
            components,
            threshold,
            sigma,
            centered,
            output,
        } => cmd_pca(&datasets, &window, components, threshold, sigma, centered, &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pcnet: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
