//! The `migo` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use migo_core::metrics::SummaryReport;
use serde::Serialize;

use crate::config::{AttackKind, Config, ConfigError, RegionMode};
use crate::experiment::{run_experiment, ExperimentResult};
use crate::{output, plot};

#[derive(Debug, Parser)]
#[command(name = "migo", version, about = "Federated-learning backdoor simulator")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: out/<config name>).
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    /// Override the number of rounds; the attack window is clamped to fit.
    #[arg(long, global = true)]
    rounds: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for local training (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write metrics, summary, round log and plots.
    Run { config: PathBuf },
    /// Run consecutive seeds and report mean and standard deviation.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Run several configs and tabulate attack x backdoor against defense.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Render SVG charts from a metrics.csv file.
    Plot { metrics: PathBuf },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 2 for usage or config errors, 1 for
/// anything that failed at run time.
pub fn run_cli<I, T>(args: I) -> i32
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
    let level = if cli.global.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();

    let result = match cli.global.threads {
        Some(0) => Err(ConfigError("--threads must be >= 1".into()).into()),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .context("building thread pool")
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("config error: {e:#}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Run { config } => {
            let cfg = prepare(config, g, g.seed)?;
            let dir = outdir(g, &cfg);
            let res = execute(&cfg, &dir)?;
            if !g.quiet {
                println!("{}", serde_json::to_string(&res.summary)?);
            }
            Ok(())
        }
        Command::Sweep { config, seeds } => {
            if *seeds == 0 {
                return Err(ConfigError("--seeds must be >= 1".into()).into());
            }
            let base = prepare(config, g, g.seed)?;
            let dir = outdir(g, &base);
            let mut summaries = Vec::new();
            for k in 0..*seeds {
                let mut cfg = base.clone();
                cfg.seed = base.seed + k;
                let res = execute(&cfg, &dir.join(format!("seed-{}", cfg.seed)))?;
                summaries.push(res.summary);
            }
            let agg = SweepSummary::from_reports(&summaries);
            let text = serde_json::to_string_pretty(&agg)?;
            std::fs::write(dir.join("sweep.json"), format!("{text}\n"))?;
            if !g.quiet {
                println!("{}", agg.render());
            }
            Ok(())
        }
        Command::Compare { configs } => {
            let cfgs = configs
                .iter()
                .map(|p| prepare(p, g, g.seed))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let dir = g.outdir.clone().unwrap_or_else(|| PathBuf::from("out/compare"));
            let mut table = CompareTable::default();
            for (path, cfg) in configs.iter().zip(&cfgs) {
                let stem = path
                    .file_stem()
                    .map_or_else(|| cfg.name.clone(), |s| s.to_string_lossy().into_owned());
                let res = execute(cfg, &dir.join(stem))?;
                table.add(cfg, &res.summary);
            }
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("compare.md"), table.markdown())?;
            let mut w = csv::Writer::from_path(dir.join("compare.csv"))?;
            for row in table.csv_rows() {
                w.write_record(&row)?;
            }
            w.flush()?;
            if !g.quiet {
                print!("{}", table.markdown());
            }
            Ok(())
        }
        Command::Plot { metrics } => {
            let rows = output::read_metrics(metrics)?;
            let dir = g
                .outdir
                .clone()
                .or_else(|| metrics.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            for p in plot::write_plots(&dir, &rows)? {
                info!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

/// Loads a config and applies command-line overrides.
fn prepare(path: &Path, g: &GlobalOpts, seed: Option<u64>) -> anyhow::Result<Config> {
    let mut cfg = Config::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = g.rounds {
        let e = &mut cfg.experiment;
        e.total_rounds = r;
        e.attack_window.1 = e.attack_window.1.min(r);
        e.attack_window.0 = e.attack_window.0.min(e.attack_window.1);
    }
    cfg.validate()
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn outdir(g: &GlobalOpts, cfg: &Config) -> PathBuf {
    g.outdir.clone().unwrap_or_else(|| Path::new("out").join(&cfg.name))
}

fn execute(cfg: &Config, dir: &Path) -> anyhow::Result<ExperimentResult> {
    info!(
        "running {} (seed {}, {} rounds) into {}",
        cfg.name,
        cfg.seed,
        cfg.experiment.total_rounds,
        dir.display()
    );
    let res = run_experiment(cfg).with_context(|| format!("experiment {}", cfg.name))?;
    output::write_all(dir, &res.series.rows, &res.summary, &res.records)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    plot::write_plots(dir, &res.series.rows)?;
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// `None` if any value is missing. Uses the sample standard deviation.
    pub fn of(values: &[Option<f64>]) -> Option<Self> {
        let v: Vec<f64> = values.iter().copied().collect::<Option<_>>()?;
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Self { mean, std: var.sqrt() })
    }
}

fn fmt_ms(m: Option<MeanStd>) -> String {
    m.map_or_else(|| "-".into(), |m| format!("{:.2} ± {:.2}", m.mean, m.std))
}

#[derive(Debug, Serialize)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub max_acc: Option<MeanStd>,
    pub l100: Option<MeanStd>,
    pub l300: Option<MeanStd>,
    pub l600: Option<MeanStd>,
    pub final_ben_acc: Option<MeanStd>,
    pub ben_acc_drop: Option<MeanStd>,
}

impl SweepSummary {
    pub fn from_reports(reports: &[SummaryReport]) -> Self {
        let field = |f: fn(&SummaryReport) -> Option<f64>| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            seeds: reports.iter().map(|r| r.seed).collect(),
            config_hash: reports.first().map(|r| r.config_hash.clone()).unwrap_or_default(),
            max_acc: field(|r| Some(r.max_acc)),
            l100: field(|r| r.l100),
            l300: field(|r| r.l300),
            l600: field(|r| r.l600),
            final_ben_acc: field(|r| Some(r.final_ben_acc)),
            ben_acc_drop: field(|r| r.ben_acc_drop),
        }
    }

    pub fn render(&self) -> String {
        [
            ("MaxAcc", self.max_acc),
            ("L100", self.l100),
            ("L300", self.l300),
            ("L600", self.l600),
            ("final BenAcc", self.final_ben_acc),
            ("BenAcc drop", self.ben_acc_drop),
        ]
        .iter()
        .map(|(k, v)| format!("{k:>12}: {}", fmt_ms(*v)))
        .collect::<Vec<_>>()
        .join("\n")
    }
}

fn attack_label(cfg: &Config) -> String {
    let a = &cfg.attack;
    let base = match a.kind {
        AttackKind::None => "none",
        AttackKind::Migo => "migo",
        AttackKind::Backpgd => "backpgd",
        AttackKind::Mrepl => "mrepl",
        AttackKind::Neurotoxin => "neurotoxin",
    };
    match (a.kind, a.region) {
        (AttackKind::Migo, RegionMode::Adaptive) => format!("{base}-adaptive"),
        (AttackKind::Migo, RegionMode::None) => format!("{base}-noregion"),
        _ => base.to_string(),
    }
}

/// (attack label, backdoor kind).
type RowKey = (String, String);

/// Attack x backdoor rows against defense column groups.
#[derive(Debug, Default)]
pub struct CompareTable {
    rows: Vec<RowKey>,
    defenses: Vec<String>,
    cells: Vec<(RowKey, String, [Option<f64>; 4])>,
}

impl CompareTable {
    pub fn add(&mut self, cfg: &Config, s: &SummaryReport) {
        let key = (attack_label(cfg), format!("{:?}", cfg.backdoor.kind).to_uppercase());
        let defense = cfg.defense.name().to_string();
        if !self.rows.contains(&key) {
            self.rows.push(key.clone());
        }
        if !self.defenses.contains(&defense) {
            self.defenses.push(defense.clone());
        }
        self.cells
            .push((key, defense, [Some(s.max_acc), s.l100, s.l300, s.l600]));
    }

    fn cell(&self, key: &(String, String), defense: &str) -> Option<&[Option<f64>; 4]> {
        self.cells
            .iter()
            .rev()
            .find(|(k, d, _)| k == key && d == defense)
            .map(|(_, _, v)| v)
    }

    const METRICS: [&'static str; 4] = ["MaxAcc", "L100", "L300", "L600"];

    fn header(&self) -> Vec<String> {
        let mut h = vec!["attack".to_string(), "backdoor".to_string()];
        for d in &self.defenses {
            h.extend(Self::METRICS.iter().map(|m| format!("{d} {m}")));
        }
        h
    }

    fn body(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|key| {
                let mut r = vec![key.0.clone(), key.1.clone()];
                for d in &self.defenses {
                    match self.cell(key, d) {
                        Some(vals) => {
                            r.extend(vals.iter().map(|v| v.map_or_else(|| "-".into(), |x| format!("{x:.1}"))))
                        }
                        None => r.extend(std::iter::repeat_n(String::new(), 4)),
                    }
                }
                r
            })
            .collect()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut out = vec![self.header()];
        out.extend(self.body());
        out
    }

    pub fn markdown(&self) -> String {
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        let header = self.header();
        let mut s = line(&header);
        s.push_str(&line(&vec!["---".to_string(); header.len()]));
        for r in self.body() {
            s.push_str(&line(&r));
        }
        s
    }
}
