//! Command-line front end. The `hut` binary is a thin wrapper over [`run`].

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{Adapter, WeightAdapter};
use crate::block::parse_targets;
use crate::checkpoint::Checkpoint;
use crate::config::{ConfigOverrides, TrainConfig, DEFAULT_MODEL_DIM, RANK_SWEEP_MODEL_DIM};
use crate::error::{HutError, Result};
use crate::flops::{measure_forward_flops, measure_merged_flops, write_flops_csv, FlopsReport};
use crate::sweep::{sweep_rank, sweep_targets, write_sweep_csv, SweepRow, RANK_SWEEP_RANKS, RANK_SWEEP_SETS};
use crate::task::SyntheticTask;
use crate::tensor::gaussian_with;
use crate::train::{finetune, write_loss_csv};
use crate::validate::{random_hut_state, random_lora_state, run_validation, ValidateOptions};

pub const DEFAULT_OUT_DIR: &str = "hut-out";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "adapters.hutckpt";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const FLOPS_FILE: &str = "flops.csv";

#[derive(Debug, Parser)]
#[command(name = "hut", version, about = "HUT and LoRA adapters on a toy transformer block")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", env = "HUT_OUT_DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["hut", "lora"])]
    pub method: Option<String>,
    /// Comma-separated weight names, e.g. `Wq,Wv`.
    #[arg(long, global = true, value_name = "CSV")]
    pub targets: Option<String>,
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the merge, gradient and FLOPs self-checks.
    Validate,
    /// Measure forward-pass FLOPs against the closed forms.
    Flops(FlopsArgs),
    /// Fine-tune one adapter configuration on the synthetic task.
    Train,
    /// Run a target or rank ablation grid.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
    },
}

#[derive(Debug, Clone, Args)]
pub struct FlopsArgs {
    /// Token counts.
    #[arg(long, value_delimiter = ',', default_value = "1,8,64")]
    pub n: Vec<usize>,
    /// Input widths.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,64,256")]
    pub d: Vec<usize>,
    /// Output widths; defaults to each `d` (square weights).
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Ranks; `--rank` narrows this to one value.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub r: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Targets,
    Rank,
}

impl SweepKind {
    fn file_name(self) -> &'static str {
        match self {
            SweepKind::Targets => "sweep_targets.csv",
            SweepKind::Rank => "sweep_rank.csv",
        }
    }
}

impl CommonArgs {
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    fn overrides(&self) -> Result<ConfigOverrides> {
        let file = match &self.config {
            Some(p) => ConfigOverrides::from_file(p)?,
            None => ConfigOverrides::default(),
        };
        let flags = ConfigOverrides {
            method: self.method.clone(),
            targets: self.targets.clone(),
            rank: self.rank,
            lr: self.lr,
            steps: self.steps,
            seed: self.seed,
            ..ConfigOverrides::default()
        };
        Ok(file.overlay(&flags))
    }

    fn resolve(&self, default_model_dim: usize) -> Result<TrainConfig> {
        TrainConfig::resolve(&self.overrides()?, default_model_dim)
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HutError::io(dir, e))
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| HutError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| HutError::io(&path, e))?;
    Ok(path)
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Returns `Ok(false)` when a command ran but its checks failed.
pub fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Validate => cmd_validate(&cli.common),
        Command::Flops(a) => cmd_flops(&cli.common, a).map(|_| true),
        Command::Train => cmd_train(&cli.common).map(|_| true),
        Command::Sweep { kind } => cmd_sweep(&cli.common, *kind).map(|_| true),
    }
}

fn cmd_validate(common: &CommonArgs) -> Result<bool> {
    let report = run_validation(&ValidateOptions {
        seed: common.seed.unwrap_or(0),
        ..ValidateOptions::default()
    })?;
    print!("{}", report.render());
    Ok(report.passed())
}

/// Measures every `(N, d, k, r)` cell of the grid for HUT, LoRA and the
/// merged dense layer. Cells with `r > min(d, k)` are skipped.
pub fn flops_rows(seed: u64, n: &[usize], d: &[usize], k: Option<&[usize]>, r: &[usize]) -> Result<Vec<FlopsReport>> {
    let mut keys = Vec::new();
    for &nn in n {
        for &dd in d {
            let ks = k.map(<[usize]>::to_vec).unwrap_or_else(|| vec![dd]);
            for kk in ks {
                for &rr in r {
                    if rr >= 1 && rr <= dd.min(kk) && nn >= 1 {
                        keys.push((nn, dd, kk, rr));
                    }
                }
            }
        }
    }
    keys.sort_unstable();
    keys.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(keys.len() * 3);
    for (nn, dd, kk, rr) in keys {
        let x = gaussian_with(nn, dd, 0.0, 1.0, &mut rng)?;
        let hut = Adapter::Hut(random_hut_state(&mut rng, dd, kk, rr)?);
        let lora = Adapter::Lora(random_lora_state(&mut rng, dd, kk, rr)?);
        rows.push(measure_forward_flops(&hut, &x)?);
        rows.push(measure_forward_flops(&lora, &x)?);
        rows.push(measure_merged_flops(&hut.merge()?, &x, rr)?);
    }
    Ok(rows)
}

fn cmd_flops(common: &CommonArgs, a: &FlopsArgs) -> Result<PathBuf> {
    let ranks = match common.rank {
        Some(r) => vec![r],
        None => a.r.clone(),
    };
    let rows = flops_rows(common.seed.unwrap_or(0), &a.n, &a.d, a.k.as_deref(), &ranks)?;
    let out = common.out_dir();
    prepare_out(&out)?;
    let path = write_file(&out, FLOPS_FILE, |w| write_flops_csv(w, &rows))?;
    println!("{:<12} {:>5} {:>5} {:>5} {:>4} {:>12} {:>12}", "method", "N", "d", "k", "r", "theoretical", "measured");
    for r in &rows {
        println!(
            "{:<12} {:>5} {:>5} {:>5} {:>4} {:>12} {:>12}{}",
            r.method.to_string(),
            r.n,
            r.d,
            r.k,
            r.r,
            r.theoretical,
            r.measured,
            if r.exact() { "" } else { "  MISMATCH" }
        );
    }
    println!("wrote {}", path.display());
    Ok(path)
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let cfg = common.resolve(DEFAULT_MODEL_DIM)?;
    let task = SyntheticTask::generate(cfg.task_spec())?;
    let run = finetune(&task.pretrained, &task, &cfg.finetune_config())?;

    let out = common.out_dir();
    prepare_out(&out)?;
    write_file(&out, LOSS_FILE, |w| write_loss_csv(w, &run.loss_trace))?;
    let mut ckpt = Checkpoint::new(cfg.seed, cfg.to_pairs());
    ckpt.push_block_adapters(&run.block);
    ckpt.save(&out.join(CHECKPOINT_FILE))?;

    let summary = format!(
        "method={} targets={} rank={} trainable_params={} initial_loss={:.6e} final_loss={:.6e} {}={:.6e}",
        cfg.method,
        crate::block::format_targets(&cfg.targets),
        cfg.rank,
        run.trainable_params,
        run.initial_loss(),
        run.final_loss(),
        run.metric_name,
        run.eval_metric
    );
    write_file(&out, SUMMARY_FILE, |w| writeln!(w, "{summary}"))?;
    println!("{summary}");
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, kind: SweepKind) -> Result<Vec<SweepRow>> {
    let (cfg, rows) = match kind {
        SweepKind::Targets => {
            if common.targets.is_some() || common.rank.is_some() {
                eprintln!("note: the target sweep chooses its own targets and ranks; --targets/--rank ignored");
            }
            let cfg = common.resolve(DEFAULT_MODEL_DIM)?;
            let task = SyntheticTask::generate(cfg.task_spec())?;
            let rows = sweep_targets(&task, &cfg.finetune_config(), common.jobs)?;
            (cfg, rows)
        }
        SweepKind::Rank => {
            let cfg = common.resolve(RANK_SWEEP_MODEL_DIM)?;
            let task = SyntheticTask::generate(cfg.task_spec())?;
            let custom;
            let sets: Vec<&[_]> = match &common.targets {
                Some(csv) => {
                    custom = parse_targets(csv)?;
                    vec![custom.as_slice()]
                }
                None => RANK_SWEEP_SETS.to_vec(),
            };
            let ranks = match common.rank {
                Some(r) => vec![r],
                None => RANK_SWEEP_RANKS.to_vec(),
            };
            let rows = sweep_rank(&task, &cfg.finetune_config(), &sets, &ranks, common.jobs)?;
            (cfg, rows)
        }
    };
    let metric = cfg.task.metric_name();
    let out = common.out_dir();
    prepare_out(&out)?;
    let path = write_file(&out, kind.file_name(), |w| write_sweep_csv(w, metric, &rows))?;
    println!("{:<12} {:>4} {:>8} {:>12} {:>12} {:>12}", "targets", "rank", "params", "initial", "final", metric);
    for r in &rows {
        println!(
            "{:<12} {:>4} {:>8} {:>12.4e} {:>12.4e} {:>12.4e}",
            crate::block::format_targets(&r.targets),
            r.rank,
            r.trainable_params,
            r.initial_loss,
            r.final_loss,
            r.metric
        );
    }
    println!("wrote {}", path.display());
    Ok(rows)
}
