use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use packed_core::nn::InitScheme;
use packed_core::packed::{count_packed, count_params, MemberInit, PackedNetwork, Style};
use packed_core::sparsity::{kl_sweep, sweep_csv};
use packed_core::Tensor;
use packed_harness::ablate::{ablation_csv, parse_list, run_ablation};
use packed_harness::config::{build_arch, ExperimentConfig, Task};
use packed_harness::eval::{run_eval, run_eval_regression};
use packed_harness::report::emit_report;
use packed_harness::train::{load_dataset, train_on, Checkpoint};
use packed_harness::{idx, rng, HarnessError, Result};

#[derive(Parser)]
#[command(name = "packed", about = "Packed-Ensembles experiments", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Forces deterministic execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides the realization style (a, b or c).
    #[arg(long, global = true)]
    style: Option<String>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write the best-validation checkpoint (JSON).
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Evaluate a checkpoint on the test split against an OOD set, under every criterion.
    OodEval(OodArgs),
    /// Sweep (alpha, M, gamma) and write a CSV.
    Ablate(AblateArgs),
    /// Parameter counts of the single and packed networks.
    Params,
    /// Sweep the pruning KL bound over (p, sigma_z) and write a CSV.
    KlBound(KlArgs),
    /// Check that the three realization styles compute the same ensemble.
    EquivCheck(EquivArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct OodArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// OOD images as an IDX pair `IMAGES,LABELS`; defaults to the synthetic generator's OOD set.
    #[arg(long)]
    ood: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value = "1,2")]
    alphas: String,
    #[arg(long, default_value = "2,4")]
    ms: String,
    #[arg(long, default_value = "1,2")]
    gammas: String,
}

#[derive(Args)]
struct KlArgs {
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    ps: String,
    #[arg(long, default_value = "0.25,0.5,1,2,4")]
    sigmas: String,
    #[arg(long, default_value_t = 1)]
    c_in: usize,
    #[arg(long, default_value_t = 0.1)]
    mu: f64,
    #[arg(long, default_value_t = 0.1)]
    w: f64,
}

#[derive(Args)]
struct EquivArgs {
    #[arg(long, default_value_t = 20)]
    inputs: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if common.deterministic {
        cfg.set_deterministic(true);
    }
    if let Some(s) = &common.style {
        cfg.style = s.parse::<Style>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(common: &Common, cfg: &ExperimentConfig, default: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| HarnessError::Config(format!("bad number '{v}'"))))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Train => {
            let cfg = config(common)?;
            let (data, _) = load_dataset(&cfg)?;
            let out = train_on(&cfg, &data)?;
            for l in &out.log {
                let acc = l.val_acc.map_or(String::new(), |a| format!(" val_acc={a}"));
                println!("epoch={} loss={} lr={} val_nll={}{acc}", l.epoch, l.loss, l.lr, l.val_nll);
            }
            let path = output(common, &cfg, "checkpoint.json");
            out.checkpoint.save(&path)?;
            println!("checkpoint={} best_epoch={}", path.display(), out.checkpoint.epoch);
        }
        Command::Eval(a) => {
            let cfg = config(common)?;
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let (data, _) = load_dataset(&cfg)?;
            let path = output(common, &cfg, "report.json");
            match cfg.task {
                Task::Classify => emit_report(&run_eval(&ckpt, &data.test, None)?, &path)?,
                Task::Regress => emit_report(&run_eval_regression(&ckpt, &data.test)?, &path)?,
            }
            println!("report={}", path.display());
        }
        Command::OodEval(a) => {
            let cfg = config(common)?;
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let (data, synth_ood) = load_dataset(&cfg)?;
            let ood = match &a.ood {
                Some(spec) => {
                    let (i, l) = spec
                        .split_once(',')
                        .ok_or_else(|| HarnessError::Config("--ood needs IMAGES,LABELS".into()))?;
                    idx::load_idx(i, l)?.inputs
                }
                None => synth_ood.ok_or_else(|| HarnessError::Config("dataset has no OOD set; pass --ood".into()))?,
            };
            let path = output(common, &cfg, "report.json");
            emit_report(&run_eval(&ckpt, &data.test, Some(&ood))?, &path)?;
            println!("report={}", path.display());
        }
        Command::Ablate(a) => {
            let cfg = config(common)?;
            let (data, ood) = load_dataset(&cfg)?;
            let rows = run_ablation(
                &cfg,
                &data,
                ood.as_ref(),
                &parse_list(&a.alphas)?,
                &parse_list(&a.ms)?,
                &parse_list(&a.gammas)?,
            )?;
            let path = output(common, &cfg, "ablation.csv");
            write(&path, &ablation_csv(&rows))?;
            println!("csv={} rows={}", path.display(), rows.len());
        }
        Command::Params => {
            let cfg = config(common)?;
            let (data, _) = load_dataset(&cfg)?;
            let outputs = data.num_classes().unwrap_or(2);
            let base = build_arch(&cfg.arch, data.train.sample_shape(), outputs)?;
            let single = count_params(&base);
            let net = PackedNetwork::new(&base, cfg.packed, cfg.style, outputs, MemberInit::new(cfg.seed()))?;
            let packed = count_packed(&net);
            println!("model,total,weights");
            println!("single,{},{}", single.total, single.weights);
            println!("{},{},{}", cfg.packed, packed.total, packed.weights);
        }
        Command::KlBound(a) => {
            let points = kl_sweep(&floats(&a.ps)?, &floats(&a.sigmas)?, a.c_in, a.mu, a.w)?;
            let csv = sweep_csv(&points);
            match &common.out {
                Some(p) => write(p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::EquivCheck(a) => {
            let cfg = config(common)?;
            let (data, _) = load_dataset(&cfg)?;
            let outputs = data.num_classes().unwrap_or(2);
            let base = build_arch(&cfg.arch, data.train.sample_shape(), outputs)?;
            let init = MemberInit {
                seed: cfg.seed(),
                distinct: true,
                scheme: InitScheme::HeNormal,
            };
            let mut shape = vec![a.inputs];
            shape.extend_from_slice(data.train.sample_shape());
            let x = Tensor::randn(&shape, 1.0, &mut rng(cfg.seed()));
            let reference = PackedNetwork::new(&base, cfg.packed, Style::Sequential, outputs, init)?;
            let want = reference.ensemble_forward(&x)?.member_logits;
            let mut worst: f64 = 0.0;
            for style in [Style::Rearrange, Style::FullFirstConv] {
                let got = reference.to_style(style)?.ensemble_forward(&x)?.member_logits;
                worst = worst.max(got.max_abs_diff(&want));
            }
            println!("config={} max_abs_diff={worst:e} tol={:e}", cfg.packed, a.tol);
            if !(worst <= a.tol) {
                return Err(HarnessError::Data(format!("styles disagree by {worst:e}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", first.trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", packed_harness::config::one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}

