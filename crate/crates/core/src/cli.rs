//! The `psep` command-line front end. Every path is resolved against
//! `--workdir`:
//!
//! ```text
//! <workdir>/data/          dataset records and the config that produced them
//! <workdir>/checkpoints/   content-addressed checkpoints, one config per file
//! <workdir>/telemetry/     per-run loss CSVs
//! <workdir>/reports/       cross-likelihood and degenerate-input reports
//! <workdir>/separations/   separation outputs
//! <workdir>/samples/       generated frames
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{find_checkpoint, Checkpoint, SIGMA_LEVELS};
use crate::config::RunConfig;
use crate::density::{DensityModel, ModelFamily};
use crate::error::{Error, Result};
use crate::evaluation::{
    cross_likelihood_checkpoints, degenerate_input_table, discrimination_report, emit_degenerate_reports,
    emit_matrix_reports, row_dominance, text_heatmap, CheckpointRef,
};
use crate::separation::{
    gaussian_posterior_oracle, separation_quality, sgld_separate, sgld_separate_annealed, write_diagnostics,
    AnnealLevel, GaussianPrior, SeparationResult,
};
use crate::signal::{
    make_mix_record, read_dataset, read_record, read_wav, write_dataset, write_record, write_wav, Dataset, Frame,
    SourceKind, Split,
};
use crate::training::{finetune_noisy, train_prior, ModelSpec, TrainOutcome};

pub const THREADS_ENV: &str = "PSEP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "psep", version, about = "Generative priors over 1-D signals and Langevin source separation")]
pub struct Cli {
    /// root of every input and output path
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// TOML file overriding the profile defaults
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// start from full-size defaults instead of the desk profile
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// dataset directory, relative to the workdir
    #[arg(long, global = true, default_value = "data")]
    pub data: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the toy dataset.
    GenData,
    /// Train noise-free priors.
    Train(TrainArgs),
    /// Fine-tune noise-free priors on noisy frames.
    Finetune(FinetuneArgs),
    /// Cross-likelihood matrices over data-noise and conditioning levels.
    EvalMatrix(EvalMatrixArgs),
    /// Log-likelihood of constant and noise inputs.
    EvalDegenerate(EvalDegenerateArgs),
    /// Separate a mix with SGLD.
    Separate(SeparateArgs),
    /// Draw frames from a trained prior.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct Selection {
    #[arg(long, value_parser = parse_family)]
    pub family: Option<ModelFamily>,
    #[arg(long, value_parser = parse_source)]
    pub source: Option<SourceKind>,
    /// every family and source (every source of `--family` when given)
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub select: Selection,
    /// override `train.total_steps`
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub select: Selection,
    #[arg(long)]
    pub sigma: f64,
    /// accept a σ outside the standard levels
    #[arg(long)]
    pub any_sigma: bool,
    /// override `train.finetune_steps`
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalMatrixArgs {
    #[arg(long, value_parser = parse_family, default_value = "flow")]
    pub family: ModelFamily,
    /// data-noise levels σ_d, comma separated (default `eval.data_noise`)
    #[arg(long, value_delimiter = ',')]
    pub data_noise: Vec<f64>,
    /// conditioning levels σ_c, comma separated (default `eval.cond`)
    #[arg(long, value_delimiter = ',')]
    pub cond: Vec<f64>,
    /// compare across σ tags or families
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalDegenerateArgs {
    #[arg(long, value_parser = parse_family, default_value = "flow")]
    pub family: ModelFamily,
    /// noisy σ tag (default `eval.degenerate_sigma`)
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// dataset record (`.bin`) or mono WAV; a fresh test mix when absent
    #[arg(long)]
    pub mix: Option<PathBuf>,
    #[arg(long, value_parser = parse_family, default_value = "flow")]
    pub family: ModelFamily,
    /// Gaussian priors fitted to the true sources, with the exact posterior
    #[arg(long)]
    pub oracle_gaussian: bool,
    /// run the σ schedule of `sgld.schedule` (or every standard level)
    #[arg(long)]
    pub anneal: bool,
    /// override `sgld.steps`
    #[arg(long)]
    pub steps: Option<usize>,
    /// output directory name under `separations/`
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: ModelFamily,
    #[arg(long, value_parser = parse_source)]
    pub source: SourceKind,
    #[arg(short = 'n', default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_family(s: &str) -> std::result::Result<ModelFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_source(s: &str) -> std::result::Result<SourceKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Paths created by a command, removed again unless the command succeeds.
struct Staged {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl Staged {
    fn new() -> Self {
        Staged { paths: Vec::new(), committed: false }
    }

    fn add(&mut self, p: impl Into<PathBuf>) {
        self.paths.push(p.into());
    }

    fn add_all(&mut self, ps: impl IntoIterator<Item = PathBuf>) {
        self.paths.extend(ps);
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in self.paths.iter().rev() {
            if p.is_dir() {
                let _ = std::fs::remove_dir_all(p);
            } else {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

struct Ctx {
    workdir: PathBuf,
    data_dir: PathBuf,
    cfg: RunConfig,
}

impl Ctx {
    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.workdir.join(name);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn checkpoints(&self) -> PathBuf {
        self.workdir.join("checkpoints")
    }

    fn dataset(&self) -> Result<Dataset> {
        if !self.data_dir.join(Split::Train.dir_name()).is_dir() {
            return Err(Error::Missing(vec![format!("dataset {} (run gen-data)", self.data_dir.display())]));
        }
        let ds = read_dataset(&self.data_dir)?;
        if ds.frame_len != self.cfg.data.frame_len || ds.sample_rate != self.cfg.data.sample_rate {
            return Err(Error::Config(format!(
                "dataset has {} Hz / {} samples but the config asks for {} Hz / {}",
                ds.sample_rate, ds.frame_len, self.cfg.data.sample_rate, self.cfg.data.frame_len
            )));
        }
        Ok(ds)
    }

    /// Load one checkpoint per source; every missing tag is reported.
    fn load_tagged(&self, family: ModelFamily, sources: &[SourceKind], sigma: f64) -> Result<Vec<(PathBuf, Checkpoint)>> {
        let dir = self.checkpoints();
        let mut found = Vec::new();
        let mut missing = Vec::new();
        for &s in sources {
            match find_checkpoint(&dir, family, s, sigma) {
                Some(p) => found.push(p),
                None => missing.push(format!("{} checkpoint for {} at sigma {}", family, s.name(), sigma)),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Missing(missing));
        }
        found
            .into_iter()
            .map(|p| {
                let ck = Checkpoint::read(&p)?;
                Ok((p, ck))
            })
            .collect()
    }

    /// Provenance with the path relative to the workdir, so reports do not
    /// depend on where the workdir lives.
    fn ck_ref(&self, path: &Path, ck: &Checkpoint) -> CheckpointRef {
        CheckpointRef::new(path.strip_prefix(&self.workdir).unwrap_or(path), ck)
    }

    fn model_spec(&self, family: ModelFamily) -> Result<ModelSpec> {
        match family {
            ModelFamily::Flow => Ok(ModelSpec::Flow(self.cfg.flow)),
            ModelFamily::Autoregressive => Ok(ModelSpec::Ar(self.cfg.ar)),
            ModelFamily::Gaussian => Err(Error::InvalidArgument("Gaussian priors are not trained".into())),
        }
    }
}

fn selection(sel: &Selection) -> Result<Vec<(ModelFamily, SourceKind)>> {
    let families = match (sel.family, sel.all) {
        (Some(f), _) => vec![f],
        (None, true) => vec![ModelFamily::Flow, ModelFamily::Autoregressive],
        (None, false) => return Err(Error::InvalidArgument("pass --family (and --source) or --all".into())),
    };
    let sources = match (sel.source, sel.all) {
        (Some(_), true) => return Err(Error::InvalidArgument("--source and --all are exclusive".into())),
        (Some(s), false) => vec![s],
        (None, true) => SourceKind::ALL.to_vec(),
        (None, false) => return Err(Error::InvalidArgument("pass --source or --all".into())),
    };
    Ok(families.iter().flat_map(|&f| sources.iter().map(move |&s| (f, s))).collect())
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.paper_scale)?;
    std::fs::create_dir_all(&cli.workdir).map_err(|e| Error::io(&cli.workdir, e))?;
    let ctx = Ctx { data_dir: cli.workdir.join(&cli.data), workdir: cli.workdir, cfg };
    match cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Train(a) => train(ctx, a),
        Command::Finetune(a) => finetune(ctx, a),
        Command::EvalMatrix(a) => eval_matrix(ctx, a),
        Command::EvalDegenerate(a) => eval_degenerate(ctx, a),
        Command::Separate(a) => separate(ctx, a),
        Command::Sample(a) => sample(&ctx, a),
    }
}

/// Configure the global thread pool from `PSEP_THREADS`.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse `args`, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let dir = &ctx.data_dir;
    if dir.exists() && std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some() {
        return Err(Error::InvalidArgument(format!("{} already exists and is not empty", dir.display())));
    }
    let mut staged = Staged::new();
    staged.add(dir.clone());
    let t = Instant::now();
    let (n_train, n_test) = write_dataset(&ctx.cfg.data, dir)?;
    ctx.cfg.write_resolved(&dir.join("config.toml"))?;
    staged.commit();
    println!(
        "wrote {n_train} train / {n_test} test records ({} Hz, {} samples) to {} in {:.1?}",
        ctx.cfg.data.sample_rate,
        ctx.cfg.data.frame_len,
        dir.display(),
        t.elapsed()
    );
    Ok(())
}

/// Store a training outcome with its telemetry and resolved config.
fn store_outcome(ctx: &Ctx, out: &TrainOutcome, tel_tmp: &Path, staged: &mut Staged) -> Result<PathBuf> {
    let ck_dir = ctx.dir("checkpoints")?;
    let existed = ck_dir.join(out.checkpoint.file_name()).exists();
    let path = out.checkpoint.store(&ck_dir)?;
    let stem = path.file_stem().expect("checkpoint file name").to_string_lossy().into_owned();
    let cfg_path = ck_dir.join(format!("{stem}.toml"));
    let tel_path = ctx.dir("telemetry")?.join(format!("{stem}.csv"));
    if !existed {
        staged.add_all([path.clone(), cfg_path.clone(), tel_path.clone()]);
    }
    ctx.cfg.write_resolved(&cfg_path)?;
    std::fs::rename(tel_tmp, &tel_path).map_err(|e| Error::io(&tel_path, e))?;
    Ok(path)
}

fn report_outcome(path: &Path, out: &TrainOutcome, elapsed: std::time::Duration) {
    let n = out.losses.len();
    let tail = &out.losses[n.saturating_sub(100)..];
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "{}: {} steps, final loss {:.4}{} ({:.1?})",
        path.display(),
        n,
        mean,
        if out.converged { ", converged" } else { "" },
        elapsed
    );
}

fn telemetry_tmp(ctx: &Ctx, tag: &str) -> Result<PathBuf> {
    let p = ctx.dir("telemetry")?.join(format!(".{tag}.{}.tmp", std::process::id()));
    let _ = std::fs::remove_file(&p);
    Ok(p)
}

fn train(mut ctx: Ctx, a: TrainArgs) -> Result<()> {
    if let Some(s) = a.steps {
        ctx.cfg.train.total_steps = s;
    }
    let jobs = selection(&a.select)?;
    let specs = jobs.iter().map(|&(f, s)| Ok((ctx.model_spec(f)?, s))).collect::<Result<Vec<_>>>()?;
    let ds = ctx.dataset()?;
    let ctx = &ctx;
    let results: Vec<Result<(TrainOutcome, PathBuf, std::time::Duration)>> = specs
        .into_par_iter()
        .map(|(spec, source)| {
            let tag = format!("{}-{}", spec.family(), source.name());
            let tmp = telemetry_tmp(ctx, &tag)?;
            let t = Instant::now();
            let out = train_prior(spec, source, &ds, &ctx.cfg.train, Some(&tmp));
            if out.is_err() {
                let _ = std::fs::remove_file(&tmp);
            }
            Ok((out?, tmp, t.elapsed()))
        })
        .collect();
    let mut staged = Staged::new();
    let mut first_err = None;
    let mut done = Vec::new();
    for r in results {
        match r {
            Ok(v) => done.push(v),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        for (_, tmp, _) in &done {
            let _ = std::fs::remove_file(tmp);
        }
        return Err(e);
    }
    for (out, tmp, elapsed) in &done {
        let path = store_outcome(ctx, out, tmp, &mut staged)?;
        report_outcome(&path, out, *elapsed);
    }
    staged.commit();
    Ok(())
}

fn finetune(mut ctx: Ctx, a: FinetuneArgs) -> Result<()> {
    if !(a.sigma > 0.0 && a.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", a.sigma)));
    }
    if !a.any_sigma && !SIGMA_LEVELS[1..].contains(&a.sigma) {
        return Err(Error::InvalidArgument(format!(
            "sigma {} is not one of {:?}; pass --any-sigma to allow it",
            a.sigma,
            &SIGMA_LEVELS[1..]
        )));
    }
    if let Some(s) = a.steps {
        ctx.cfg.train.finetune_steps = s;
    }
    let jobs = selection(&a.select)?;
    for &(f, _) in &jobs {
        ctx.model_spec(f)?;
    }
    let mut missing = Vec::new();
    let mut bases = Vec::new();
    for &(f, s) in &jobs {
        match find_checkpoint(&ctx.checkpoints(), f, s, 0.0) {
            Some(p) => bases.push(p),
            None => missing.push(format!("{f} checkpoint for {} at sigma 0", s.name())),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let ds = ctx.dataset()?;
    let ctx = &ctx;
    let results: Vec<Result<(TrainOutcome, PathBuf, std::time::Duration)>> = bases
        .into_par_iter()
        .map(|p| {
            let base = Checkpoint::read(&p)?;
            let tag = format!("{}-{}-sigma{}", base.family(), base.source.name(), a.sigma);
            let tmp = telemetry_tmp(ctx, &tag)?;
            let t = Instant::now();
            let out = finetune_noisy(base, a.sigma, &ds, &ctx.cfg.train, Some(&tmp));
            if out.is_err() {
                let _ = std::fs::remove_file(&tmp);
            }
            Ok((out?, tmp, t.elapsed()))
        })
        .collect();
    let mut staged = Staged::new();
    let mut done = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(v) => done.push(v),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        for (_, tmp, _) in &done {
            let _ = std::fs::remove_file(tmp);
        }
        return Err(e);
    }
    for (out, tmp, elapsed) in &done {
        let path = store_outcome(ctx, out, tmp, &mut staged)?;
        report_outcome(&path, out, *elapsed);
    }
    staged.commit();
    Ok(())
}

fn test_sets(ctx: &Ctx, ds: &Dataset) -> Vec<Vec<Vec<f64>>> {
    let cap = ctx.cfg.eval.max_test_frames.unwrap_or(usize::MAX);
    SourceKind::ALL
        .iter()
        .map(|&k| ds.split(Split::Test).iter().take(cap).map(|r| r.source(k).to_vec()).collect())
        .collect()
}

fn eval_matrix(mut ctx: Ctx, a: EvalMatrixArgs) -> Result<()> {
    let data_levels = if a.data_noise.is_empty() { vec![ctx.cfg.eval.data_noise] } else { a.data_noise.clone() };
    let cond_levels = if a.cond.is_empty() { vec![ctx.cfg.eval.cond] } else { a.cond.clone() };
    if data_levels.iter().chain(&cond_levels).any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("noise levels must be >= 0".into()));
    }
    ctx.cfg.eval.force |= a.force;
    let mut loaded = Vec::new();
    let mut missing = Vec::new();
    for &c in &cond_levels {
        match ctx.load_tagged(a.family, &SourceKind::ALL, c) {
            Ok(v) => loaded.push((c, v)),
            Err(Error::Missing(m)) => missing.extend(m),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let ds = ctx.dataset()?;
    let sets = test_sets(&ctx, &ds);
    let out_dir = ctx.dir("reports")?;
    let mut staged = Staged::new();
    for (cond, cks) in &loaded {
        let refs: Vec<CheckpointRef> = cks.iter().map(|(p, c)| ctx.ck_ref(p, c)).collect();
        let ck_refs: Vec<&Checkpoint> = cks.iter().map(|(_, c)| c).collect();
        for &sd in &data_levels {
            let mut run_cfg = ctx.cfg.clone();
            run_cfg.eval.data_noise = sd;
            run_cfg.eval.cond = *cond;
            let m = cross_likelihood_checkpoints(&ck_refs, &sets, sd, ctx.cfg.eval.seed, ctx.cfg.eval.force)?;
            let files = emit_matrix_reports(&m, &refs, ctx.cfg.eval.seed, &out_dir)?;
            staged.add_all(files);
            let cfg_path = out_dir.join(format!("{}.config.toml", m.file_stem()));
            staged.add(cfg_path.clone());
            run_cfg.write_resolved(&cfg_path)?;
            let report = discrimination_report(&m.values)?;
            let rows = row_dominance(&m.values);
            print!("{}", text_heatmap(&m));
            println!(
                "column margins: {}",
                report.margins.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
            );
            println!(
                "row dominance: {} ({}/{} rows)",
                if rows.iter().all(|&r| r) { "yes" } else { "no" },
                rows.iter().filter(|&&r| r).count(),
                rows.len()
            );
            println!("wrote {}\n", out_dir.join(format!("{}.csv", m.file_stem())).display());
        }
    }
    staged.commit();
    Ok(())
}

fn eval_degenerate(mut ctx: Ctx, a: EvalDegenerateArgs) -> Result<()> {
    let sigma = a.sigma.unwrap_or(ctx.cfg.eval.degenerate_sigma);
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("noisy sigma must be > 0, got {sigma}")));
    }
    ctx.cfg.eval.degenerate_sigma = sigma;
    let sigmas = [0.0, sigma];
    let mut missing = Vec::new();
    let mut sets = Vec::new();
    for &s in &sigmas {
        match ctx.load_tagged(a.family, &SourceKind::ALL, s) {
            Ok(v) => sets.push(v),
            Err(Error::Missing(m)) => missing.extend(m),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let priors: Vec<Vec<&dyn DensityModel>> =
        sets.iter().map(|v| v.iter().map(|(_, c)| &c.model as &dyn DensityModel).collect()).collect();
    let labels: Vec<String> = SourceKind::ALL.iter().map(|k| k.name().to_string()).collect();
    let table = degenerate_input_table(&priors, &sigmas, &labels, ctx.cfg.data.frame_len, ctx.cfg.eval.seed)?;
    let refs: Vec<CheckpointRef> = sets.iter().flatten().map(|(p, c)| ctx.ck_ref(p, c)).collect();
    let out_dir = ctx.dir("reports")?;
    let mut staged = Staged::new();
    staged.add_all(emit_degenerate_reports(&table, a.family, &refs, &out_dir)?);
    let cfg_path = out_dir.join(format!("degenerate_{}.config.toml", a.family.name()));
    staged.add(cfg_path.clone());
    ctx.cfg.write_resolved(&cfg_path)?;
    print!("{}", crate::evaluation::degenerate_text(&table));
    staged.commit();
    Ok(())
}

#[derive(Serialize)]
struct SeparationSummary {
    mix: String,
    priors: String,
    checkpoints: Vec<CheckpointRef>,
    steps: usize,
    seed: u64,
    snr_db_sample: Option<Vec<f64>>,
    snr_db_posterior_mean: Option<Vec<f64>>,
    permutation: Option<Vec<usize>>,
    oracle: Option<OracleSummary>,
}

#[derive(Serialize)]
struct OracleSummary {
    /// `Σ|estimate − exact| / Σ|exact|` per source
    mean_rel_error: Vec<f64>,
    snr_db_exact_posterior: Vec<f64>,
}

fn separate(mut ctx: Ctx, a: SeparateArgs) -> Result<()> {
    if let Some(s) = a.steps {
        ctx.cfg.sgld.steps = s;
    }
    let (mix, truth, mix_name, sample_rate) = match &a.mix {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) => {
            let f = read_wav(p)?;
            (f.samples().to_vec(), None, p.display().to_string(), f.sample_rate())
        }
        Some(p) => {
            let (sr, sources, mix) = read_record(p)?;
            (mix, Some(sources), p.display().to_string(), sr)
        }
        None => {
            let idx = ctx.cfg.separate.mix_index;
            let rec = make_mix_record(&ctx.cfg.data, Split::Test, idx)?;
            (rec.mix, Some(rec.sources), format!("generated test mix {idx}"), ctx.cfg.data.sample_rate)
        }
    };
    let n = SourceKind::ALL.len();
    if a.anneal && ctx.cfg.sgld.schedule.is_empty() {
        ctx.cfg.sgld.schedule = SIGMA_LEVELS
            .iter()
            .rev()
            .map(|&sigma| AnnealLevel { sigma, steps: ctx.cfg.separate.anneal_steps })
            .collect();
    }
    if !a.anneal {
        ctx.cfg.sgld.schedule.clear();
    }
    let cfg = &ctx.cfg;
    let mut checkpoints = Vec::new();
    let mut oracle = None;
    let result: SeparationResult;
    let priors_name;
    if a.oracle_gaussian {
        let truth = truth.as_ref().ok_or_else(|| {
            Error::InvalidArgument("--oracle-gaussian needs a mix with known sources (a dataset record)".into())
        })?;
        let fitted: Vec<GaussianPrior> = truth
            .iter()
            .map(|s| {
                let mean = s.iter().sum::<f64>() / s.len() as f64;
                let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64;
                GaussianPrior::new(mean, var)
            })
            .collect::<Result<_>>()?;
        let weights = cfg.sgld.weights_for(n);
        if a.anneal {
            let stages: Vec<Vec<GaussianPrior>> = cfg
                .sgld
                .schedule
                .iter()
                .map(|l| fitted.iter().map(|g| GaussianPrior { mean: g.mean, var: g.var + l.sigma * l.sigma }).collect())
                .collect();
            let dyn_stages: Vec<Vec<&dyn DensityModel>> =
                stages.iter().map(|s| s.iter().map(|g| g as &dyn DensityModel).collect()).collect();
            result = sgld_separate_annealed(&mix, &dyn_stages, &cfg.sgld)?;
        } else {
            let dm: Vec<&dyn DensityModel> = fitted.iter().map(|g| g as &dyn DensityModel).collect();
            result = sgld_separate(&mix, &dm, &cfg.sgld)?;
            let exact = gaussian_posterior_oracle(&mix, &fitted, &weights, cfg.sgld.gamma)?;
            let exact_means: Vec<Vec<f64>> = (0..n).map(|k| exact.iter().map(|p| p.mean[k]).collect()).collect();
            let mean_rel_error = (0..n)
                .map(|k| {
                    let diff: f64 = result.posterior_mean[k].iter().zip(&exact_means[k]).map(|(e, x)| (e - x).abs()).sum();
                    let scale: f64 = exact_means[k].iter().map(|x| x.abs()).sum();
                    diff / scale
                })
                .collect();
            let snr = separation_quality(&exact_means, truth)?.identity.iter().map(|s| s.snr_db).collect();
            oracle = Some(OracleSummary { mean_rel_error, snr_db_exact_posterior: snr });
        }
        priors_name = "oracle-gaussian".to_string();
    } else {
        if a.family != ModelFamily::Flow {
            return Err(Error::NotDifferentiable(format!(
                "{} priors cannot drive Langevin separation: a categorical density over µ-law classes has no gradient \
                 with respect to the continuous signal; use --family flow",
                a.family
            )));
        }
        let levels: Vec<f64> = if a.anneal {
            cfg.sgld.schedule.iter().map(|l| l.sigma).collect()
        } else {
            vec![cfg.separate.prior_sigma]
        };
        let mut missing = Vec::new();
        let mut stages = Vec::new();
        for &s in &levels {
            match ctx.load_tagged(a.family, &SourceKind::ALL, s) {
                Ok(v) => stages.push(v),
                Err(Error::Missing(m)) => missing.extend(m),
                Err(e) => return Err(e),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Missing(missing));
        }
        checkpoints = stages.iter().flatten().map(|(p, c)| ctx.ck_ref(p, c)).collect();
        let dyn_stages: Vec<Vec<&dyn DensityModel>> =
            stages.iter().map(|s| s.iter().map(|(_, c)| &c.model as &dyn DensityModel).collect()).collect();
        result = if a.anneal {
            sgld_separate_annealed(&mix, &dyn_stages, &cfg.sgld)?
        } else {
            sgld_separate(&mix, &dyn_stages[0], &cfg.sgld)?
        };
        priors_name = format!("{} sigma {:?}", a.family, levels);
    }

    let (snr_sample, snr_mean, permutation) = match &truth {
        Some(t) => {
            let q_mean = separation_quality(&result.posterior_mean, t)?;
            let q_sample = separation_quality(&result.sources, t)?;
            (
                Some(q_sample.identity.iter().map(|s| s.snr_db).collect::<Vec<_>>()),
                Some(q_mean.identity.iter().map(|s| s.snr_db).collect::<Vec<_>>()),
                Some(q_mean.permutation),
            )
        }
        None => (None, None, None),
    };
    let summary = SeparationSummary {
        mix: mix_name,
        priors: priors_name,
        checkpoints,
        steps: if a.anneal { cfg.sgld.schedule.iter().map(|l| l.steps).sum() } else { cfg.sgld.steps },
        seed: cfg.sgld.seed,
        snr_db_sample: snr_sample,
        snr_db_posterior_mean: snr_mean,
        permutation,
        oracle,
    };

    let name = a.out.clone().unwrap_or_else(|| {
        format!(
            "{}-mix{}-seed{}{}",
            if a.oracle_gaussian { "gaussian" } else { a.family.name() },
            cfg.separate.mix_index,
            cfg.sgld.seed,
            if a.anneal { "-anneal" } else { "" }
        )
    });
    let root = ctx.dir("separations")?;
    let out = root.join(&name);
    if out.exists() {
        std::fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    }
    let mut staged = Staged::new();
    staged.add(out.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for k in 0..n {
        let label = SourceKind::ALL[k].name();
        write_wav(&Frame::new(result.sources[k].clone(), sample_rate)?, out.join(format!("sample_{label}.wav")))?;
        write_wav(&Frame::new(result.posterior_mean[k].clone(), sample_rate)?, out.join(format!("mean_{label}.wav")))?;
    }
    write_record(&out.join("posterior_mean.bin"), sample_rate, &result.posterior_mean, &mix)?;
    write_record(&out.join("sample.bin"), sample_rate, &result.sources, &mix)?;
    write_diagnostics(&out.join("diagnostics.csv"), &result.diagnostics)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(out.join("result.json"), &json).map_err(|e| Error::io(out.join("result.json"), e))?;
    cfg.write_resolved(&out.join("config.toml"))?;
    staged.commit();
    println!("{json}");
    println!("wrote {}", out.display());
    Ok(())
}

fn sample(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::InvalidArgument("-n must be >= 1".into()));
    }
    let (path, ck) = ctx.load_tagged(a.family, &[a.source], a.sigma)?.pop().expect("one checkpoint");
    let hash = ck.hash();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let frames = ck.model.sample(&mut rng, a.n, ctx.cfg.data.frame_len)?;
    let root = ctx.dir("samples")?;
    let out = root.join(format!("{}-{}-sigma{}-{}-seed{}", a.family, a.source.name(), a.sigma, hash, a.seed));
    if out.exists() {
        std::fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    }
    let mut staged = Staged::new();
    staged.add(out.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let sr = ctx.cfg.data.sample_rate;
    for (i, f) in frames.iter().enumerate() {
        write_wav(&Frame::new(f.clone(), sr)?, out.join(format!("frame_{i:03}.wav")))?;
        let raw: Vec<u8> = f.iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = out.join(format!("frame_{i:03}.f64"));
        std::fs::write(&p, raw).map_err(|e| Error::io(&p, e))?;
    }
    let record = serde_json::json!({
        "checkpoint": path.strip_prefix(&ctx.workdir).unwrap_or(&path).display().to_string(),
        "hash": hash,
        "family": a.family.name(),
        "source": a.source.name(),
        "sigma": a.sigma,
        "seed": a.seed,
        "frames": a.n,
        "frame_len": ctx.cfg.data.frame_len,
        "sample_rate": sr,
        "raw_format": "f64 little-endian",
    });
    let p = out.join("record.json");
    std::fs::write(&p, serde_json::to_string_pretty(&record).expect("json")).map_err(|e| Error::io(&p, e))?;
    ctx.cfg.write_resolved(&out.join("config.toml"))?;
    staged.commit();
    println!("wrote {} frame(s) to {}", a.n, out.display());
    Ok(())
}
