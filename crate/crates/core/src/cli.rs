//! The `rtkd` command line. [`run`] does the work and reports through a
//! writer so callers (and tests) can capture output; [`main_with`] adds the
//! `ERROR:<category>:` line and exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::RngCore as _;

use crate::data::{crop_regions, generate_sequence, read_dataset, read_sequence, write_sequence, ScenarioKind, ScenarioSpec, Sequence, META_FILE};
use crate::encoder::{mhsa, sa_flops};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::io_util::write_atomic;
use crate::models::maps::{encode_csv, encode_pgm};
use crate::models::{checkpoint, ModelKind, StudentModel, TeacherModel, Tracker};
use crate::numerics::{rng, trunc_normal, Binder, Graph, ParamSet, Tensor};
use crate::settings::{RunConfig, CONFIG_FILE};
use crate::trainer::{distill_student, train_fost, train_teacher, TrainOutcome};

pub const TRACE_FILE: &str = "trace.csv";
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "RTKD_THREADS";

#[derive(Parser, Debug)]
#[command(name = "rtkd", about = "RGB-T tracking: synthetic data, teacher training, distillation, evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic RGB-T sequences.
    GenData(GenData),
    /// Train the two-stream teacher on labels.
    TrainTeacher(TrainArgs),
    /// Distill a trained teacher into the one-stream student.
    Distill(TrainArgs),
    /// Train the student architecture on labels only (no distillation).
    TrainFost(TrainArgs),
    /// Track every sequence and write a precision/success report.
    Eval(EvalArgs),
    /// Print the analytic self-attention cost, optionally with timings.
    BenchComplexity(BenchArgs),
    /// Write attention and score maps for one frame as PGM and CSV.
    DumpMaps(DumpArgs),
}

#[derive(Args, Debug)]
struct GenData {
    /// Output directory; one sub-directory per sequence.
    #[arg(long)]
    out: PathBuf,
    /// Scenario kind, or `mixed` to cycle through every kind.
    #[arg(long, default_value = "switching")]
    scenario: String,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    seqs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key = value` config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Teacher checkpoint (distill only).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Teacher: drop the mutual prompters entirely.
    #[arg(long)]
    no_prompter: bool,
    /// Teacher: prompter spatial attention becomes identity.
    #[arg(long)]
    no_spatial_attn: bool,
    /// Teacher: prompter token attention becomes identity.
    #[arg(long)]
    no_token_attn: bool,
    /// Teacher: prompters ignore the previous layer's prompt.
    #[arg(long)]
    no_history: bool,
    /// Distill: zero the response-map distillation weight.
    #[arg(long)]
    no_response_kd: bool,
    /// Distill: zero the feature distillation weight.
    #[arg(long)]
    no_feature_kd: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output JSON report.
    #[arg(long)]
    report: PathBuf,
    /// Architecture override; read from the checkpoint's config by default.
    #[arg(long)]
    model_kind: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Token count.
    #[arg(long)]
    n: u64,
    /// Model width.
    #[arg(long)]
    d: u64,
    /// Second token count to compare against.
    #[arg(long)]
    compare: Option<u64>,
    /// Also time real attention forwards at each size.
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    model: PathBuf,
    /// A sequence directory or a dataset root.
    #[arg(long)]
    data: PathBuf,
    /// Sequence name inside a dataset root (first by name when omitted).
    #[arg(long)]
    seq: Option<String>,
    /// Frame index whose search crop is mapped.
    #[arg(long)]
    frame: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model_kind: Option<String>,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(out, "{e}").map_err(stdout_err)?;
                return Ok(());
            }
            return Err(Error::Usage(e.to_string()));
        }
    };
    match cli.cmd {
        Command::GenData(a) => gen_data(a, out),
        Command::TrainTeacher(a) => train(ModelKind::Teacher, a, out),
        Command::Distill(a) => train(ModelKind::Student, a, out),
        Command::TrainFost(a) => train(ModelKind::Fost, a, out),
        Command::Eval(a) => eval(a, out),
        Command::BenchComplexity(a) => bench(a, out),
        Command::DumpMaps(a) => dump_maps(a, out),
    }
}

/// Runs the CLI, printing errors as one `ERROR:<category>: message` line on
/// stderr. Returns the process exit code.
pub fn main_with(args: Vec<OsString>) -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let result = configure_threads().and_then(|_| run(args, &mut lock));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("ERROR:{}: {}", e.category(), msg.trim());
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    // a pool may already exist when embedded; the cap then simply does not apply
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(stdout_err)?
    };
}

fn gen_data(a: GenData, out: &mut dyn Write) -> Result<()> {
    let kinds: Vec<ScenarioKind> = if a.scenario == "mixed" {
        ScenarioKind::ALL.to_vec()
    } else {
        vec![a.scenario.parse().map_err(|_| {
            Error::Usage(format!(
                "unknown scenario {:?}; valid kinds: {}, mixed",
                a.scenario,
                ScenarioKind::valid_names()
            ))
        })?]
    };
    if a.seqs == 0 {
        return Err(Error::Usage("--seqs must be at least 1".into()));
    }
    let mut seeds = rng::substream(a.seed, 0xda7a);
    for i in 0..a.seqs {
        let kind = kinds[i % kinds.len()];
        let mut spec = ScenarioSpec::new(kind, a.frames, seeds.next_u64());
        spec.name = format!("{}_{i:03}", kind.as_str());
        let seq = generate_sequence(&spec)?;
        write_sequence(&a.out.join(&spec.name), &seq)?;
        say!(out, "{}\t{} frames\t{}x{}\t[{}]", seq.meta.name, seq.meta.num_frames, seq.meta.width, seq.meta.height, seq.meta.attributes.join(","));
    }
    say!(out, "wrote {} sequences to {}", a.seqs, a.out.display());
    Ok(())
}

/// Config file (if any), then `--set` overrides, then flags.
fn run_config(kind: ModelKind, a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let c = RunConfig::load(p, kind)?;
            if c.model_kind != kind {
                return Err(Error::validation(format!(
                    "{} declares model_kind = {} but the command trains {kind}",
                    p.display(),
                    c.model_kind
                )));
            }
            c
        }
        None => RunConfig::defaults(kind),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        if k.trim() == "model_kind" {
            return Err(Error::Usage("model_kind is fixed by the subcommand".into()));
        }
        cfg.set(k.trim(), v.trim())?;
    }
    let prompter_flags = a.no_prompter || a.no_spatial_attn || a.no_token_attn || a.no_history;
    if prompter_flags && kind != ModelKind::Teacher {
        return Err(Error::Usage("prompter ablation flags apply to train-teacher only".into()));
    }
    if (a.no_response_kd || a.no_feature_kd) && kind != ModelKind::Student {
        return Err(Error::Usage("distillation ablation flags apply to distill only".into()));
    }
    let p = &mut cfg.model.prompter;
    p.enabled &= !a.no_prompter;
    p.spatial &= !a.no_spatial_attn;
    p.token &= !a.no_token_attn;
    p.history &= !a.no_history;
    if a.no_response_kd {
        cfg.train.weights.rm = 0.0;
    }
    if a.no_feature_kd {
        cfg.train.weights.mf = 0.0;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a checkpoint directory written by a training subcommand.
pub fn load_checkpoint(dir: &Path, kind_override: Option<ModelKind>) -> Result<(RunConfig, Tracker)> {
    let cfg_path = dir.join(CONFIG_FILE);
    let mut cfg = if cfg_path.is_file() {
        RunConfig::load(&cfg_path, kind_override.unwrap_or(ModelKind::Teacher))?
    } else {
        let kind = kind_override.ok_or_else(|| {
            Error::Usage(format!("{} has no {CONFIG_FILE}; pass --model-kind", dir.display()))
        })?;
        RunConfig::defaults(kind)
    };
    if let Some(k) = kind_override {
        let same_arch = |k: ModelKind| k == ModelKind::Teacher;
        if same_arch(k) != same_arch(cfg.model_kind) {
            return Err(Error::validation(format!(
                "{} holds a {} checkpoint, not {k}",
                dir.display(),
                cfg.model_kind
            )));
        }
        cfg.model_kind = k;
    }
    let params = checkpoint::load(dir)?;
    let tracker = Tracker::from_params(cfg.model_kind, cfg.model.clone(), &params)?;
    Ok((cfg, tracker))
}

/// Writes weights, the resolved config and the loss trace into `dir`.
pub fn save_run(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<()> {
    checkpoint::save(dir, &outcome.params)?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    outcome.trace.write(&dir.join(TRACE_FILE))
}

fn parse_kind(s: &Option<String>) -> Result<Option<ModelKind>> {
    s.as_deref().map(str::parse).transpose()
}

fn train(kind: ModelKind, a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    if kind == ModelKind::Student && a.teacher.is_none() {
        return Err(Error::Usage("distill requires --teacher <checkpoint>".into()));
    }
    if kind != ModelKind::Student && a.teacher.is_some() {
        return Err(Error::Usage("--teacher is only used by distill".into()));
    }
    let cfg = run_config(kind, &a)?;
    let data = read_dataset(&a.data)?;
    let seed = cfg.train.seed;
    let outcome = match kind {
        ModelKind::Teacher => train_teacher(TeacherModel::new(cfg.model.clone(), seed)?, &cfg.train, &data, None)?,
        ModelKind::Fost => train_fost(StudentModel::new(cfg.model.clone(), seed)?, &cfg.train, &data, None)?,
        ModelKind::Student => {
            let tdir = a.teacher.as_deref().expect("checked above");
            let (_, t) = load_checkpoint(tdir, Some(ModelKind::Teacher))?;
            let Tracker::Teacher(teacher) = t else {
                unreachable!("teacher kind loads a teacher")
            };
            distill_student(StudentModel::new(cfg.model.clone(), seed)?, &teacher, &cfg.train, &data, None)?
        }
    };
    save_run(&a.out, &cfg, &outcome)?;
    for (e, m) in outcome.trace.epoch_means().iter().enumerate() {
        say!(out, "epoch {:>3}  mean total loss {m:.6}", e + 1);
    }
    say!(out, "saved {kind} checkpoint to {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (_, tracker) = load_checkpoint(&a.model, parse_kind(&a.model_kind)?)?;
    let data = read_dataset(&a.data)?;
    let (_, report) = evaluate(&tracker, &data)?;
    write_atomic(&a.report, report.to_json().as_bytes())?;
    say!(out, "PR {:.4}  SR {:.4}", report.pr, report.sr);
    for (tag, r) in &report.attributes {
        say!(out, "  {tag:<14} PR {:.4}  SR {:.4}", r.pr, r.sr);
    }
    Ok(())
}

fn heads_for(d: u64) -> usize {
    [12, 8, 4, 2, 1].into_iter().find(|&h| d % h == 0).unwrap_or(1) as usize
}

/// Seconds for one attention forward over `n` random tokens of width `d`.
fn time_mhsa(n: u64, d: u64) -> Result<f64> {
    let (n, d) = (n as usize, d as usize);
    let mut r = rng::substream(n as u64, d as u64);
    let mut params = ParamSet::new();
    for name in ["q", "k", "v", "out"] {
        params.insert(format!("bench/attn/{name}/weight"), trunc_normal(&mut r, &[d, d], 0.02))?;
        params.insert(format!("bench/attn/{name}/bias"), Tensor::zeros(&[d]))?;
    }
    let x = trunc_normal(&mut r, &[n, d], 1.0);
    let b = Binder::new(&params, false);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let start = Instant::now();
    mhsa(&mut g, &b, "bench", xv, heads_for(d as u64))?;
    Ok(start.elapsed().as_secs_f64())
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let base = sa_flops(a.n, a.d)?;
    say!(out, "sa_flops(N={}, D={}) = {base}", a.n, a.d);
    let t1 = if a.wall_clock { Some(time_mhsa(a.n, a.d)?) } else { None };
    if let Some(t) = t1 {
        say!(out, "wall-clock N={}: {t:.6} s", a.n);
    }
    if let Some(n2) = a.compare {
        let other = sa_flops(n2, a.d)?;
        say!(out, "sa_flops(N={n2}, D={}) = {other}", a.d);
        say!(out, "ratio {:.4}", other as f64 / base as f64);
        if let Some(t1) = t1 {
            let t2 = time_mhsa(n2, a.d)?;
            say!(out, "wall-clock N={n2}: {t2:.6} s");
            say!(out, "wall-clock ratio {:.4} (informational)", t2 / t1);
        }
    }
    Ok(())
}

fn pick_sequence(a: &DumpArgs) -> Result<Sequence> {
    if a.data.join(META_FILE).is_file() {
        return read_sequence(&a.data);
    }
    let all = read_dataset(&a.data)?;
    match &a.seq {
        None => Ok(all.into_iter().next().expect("read_dataset is non-empty")),
        Some(name) => all
            .into_iter()
            .find(|s| &s.meta.name == name)
            .ok_or_else(|| Error::Usage(format!("no sequence named {name:?} in {}", a.data.display()))),
    }
}

fn dump_maps(a: DumpArgs, out: &mut dyn Write) -> Result<()> {
    let (_, tracker) = load_checkpoint(&a.model, parse_kind(&a.model_kind)?)?;
    let seq = pick_sequence(&a)?;
    let n = seq.frames.len();
    if a.frame >= n {
        return Err(Error::Usage(format!("--frame {} out of range; {} has {n} frames", a.frame, seq.meta.name)));
    }
    let cfg = tracker.cfg();
    let first = crop_regions(&seq.frames[0], &seq.meta.gt[0], &seq.meta.gt[0], cfg)?;
    let gt = seq.meta.gt[a.frame];
    let here = crop_regions(&seq.frames[a.frame], &gt, &gt, cfg)?;
    let mut inputs = here.inputs();
    inputs.z_rgb = first.template.0;
    inputs.z_tir = first.template.1;
    let maps = tracker.diagnostic_maps(&inputs)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut files = Vec::new();
    for (tag, t) in maps.attention.iter().map(|(k, t)| (format!("attn_{k}"), t)).chain([("score".to_string(), &maps.score)]) {
        write_atomic(&a.out.join(format!("{tag}.pgm")), &encode_pgm(t))?;
        write_atomic(&a.out.join(format!("{tag}.csv")), encode_csv(t).as_bytes())?;
        files.push(tag);
    }
    say!(out, "{} frame {}: wrote {} to {}", seq.meta.name, a.frame, files.join(", "), a.out.display());
    Ok(())
}
