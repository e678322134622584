//! The `reach-audit` command line.
//!
//! Every subcommand is a deterministic function of its flags: worker count only
//! changes speed, and all reports echo the full configuration.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use reach_core::audit::{
    coldstart_eval, delta_block, difficulty_bound, difficulty_l1, exact_top1_available, popularity_stats, reaction_set,
    summarize_items, user_recourse, Averaging, ItemAuditOptions, ReactionPolicy, RecourseMode,
};
use reach_core::data::{compare_ids, RatingsTable};
use reach_core::fixtures::{als_train, generate, rmse, split_holdout, SynthSpec, TrainConfig};
use reach_core::serde_util::{f64_lossless, opt_f64_lossless};
use reach_core::{BiasSign, FactorModel, RatingHistory, Tolerances};
use serde::{Serialize, Serializer};

use crate::bundle::{load_model, save_model, Manifest, ModelBundle};
use crate::error::{AppError, AppResult};
use crate::plot::{emit_plotdata, Series};
use crate::ratings::{parse_ratings, RatingsFormat};
use crate::report::write_report;

#[derive(Debug, Parser)]
#[command(
    name = "reach-audit",
    version,
    about = "Availability and recourse audits for top-N recommenders"
)]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "REACH_AUDIT_JOBS", default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lower-bound item availability from aligned-reachability.
    AuditItems(AuditItemsArgs),
    /// Compare the popularity of available and unavailable items.
    Popularity(PopularityArgs),
    /// Fraction of unseen items each sampled user can reach.
    Recourse(RecourseArgs),
    /// Cost for sampled users to make one item their top recommendation.
    Difficulty(DifficultyArgs),
    /// Evaluate an onboarding set for new users.
    Coldstart(ColdstartArgs),
    /// Generate a synthetic ratings file.
    Synth(SynthArgs),
    /// Fit a factor model by alternating least squares.
    Train(TrainArgs),
}

/// A closed interval written `LO:HI`; either end may be `inf`/`-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for Bounds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("{t:?} is not a number"));
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(format!("need LO <= HI, got {s:?}"));
        }
        Ok(Bounds { lo, hi })
    }
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl Serialize for Bounds {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    History,
    Reaction,
}

impl From<ModeArg> for RecourseMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::History => RecourseMode::HistoryEdits,
            ModeArg::Reaction => RecourseMode::Reactions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArg {
    Random,
    Top,
}

impl From<PolicyArg> for ReactionPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Random => ReactionPolicy::Random,
            PolicyArg::Top => ReactionPolicy::Top,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AvgArg {
    Reachable,
    All,
}

impl From<AvgArg> for Averaging {
    fn from(a: AvgArg) -> Self {
        match a {
            AvgArg::Reachable => Averaging::Reachable,
            AvgArg::All => Averaging::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BiasSignArg {
    Additive,
    Residual,
}

impl From<BiasSignArg> for BiasSign {
    fn from(b: BiasSignArg) -> Self {
        match b {
            BiasSignArg::Additive => BiasSign::Additive,
            BiasSignArg::Residual => BiasSign::Residual,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RatingsArgs {
    /// Ratings file.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RatingsFormat::Mlens)]
    pub format: RatingsFormat,
    /// Declared rating range; values outside it are parse errors.
    #[arg(long, value_name = "LO:HI")]
    pub range: Option<Bounds>,
    /// Sum repeated (user, item) rows and drop items whose total is below this.
    #[arg(long, value_name = "MIN_TOTAL")]
    pub aggregate: Option<f64>,
    /// Replace every value x by log(1 + x), after aggregation.
    #[arg(long)]
    pub log1p: bool,
    /// Keep only the K most rated items (ties by item id).
    #[arg(long, value_name = "K")]
    pub top_items: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Report path; `.csv` writes CSV rows, anything else JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plot-data path (`series,x,y`).
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AuditItemsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub ratings: RatingsArgs,
    /// Recommendation set sizes, comma separated.
    #[arg(short = 'N', value_delimiter = ',', default_value = "1")]
    pub n: Vec<usize>,
    /// History length allowance: audits at N + nh.
    #[arg(long, default_value_t = 0)]
    pub nh: usize,
    /// Also decide exact top-1 availability by linear programming.
    #[arg(long)]
    pub exact: bool,
    /// Rows of the item Gram matrix computed at once.
    #[arg(long, default_value_t = 256)]
    pub block_size: usize,
    /// Override the strict-inequality margin.
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PopularityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub ratings: RatingsArgs,
    #[arg(short = 'N', default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub nh: usize,
    /// Split items by exact top-1 availability instead of aligned-reachability.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct UserSampleArgs {
    /// Number of users sampled from those with ratings; 0 takes all.
    #[arg(long, default_value_t = 100)]
    pub users: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RecourseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub ratings: RatingsArgs,
    #[arg(short = 'N', default_value_t = 1)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::History)]
    pub mode: ModeArg,
    /// Reaction-set policies, comma separated (reaction mode).
    #[arg(long, value_enum, value_delimiter = ',', default_value = "random,top")]
    pub policy: Vec<PolicyArg>,
    #[arg(long, default_value_t = 5)]
    pub set_size: usize,
    /// Allowed rating interval for changed ratings.
    #[arg(long, value_name = "LO:HI", default_value = "0:5")]
    pub bounds: Bounds,
    #[command(flatten)]
    pub sample: UserSampleArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DifficultyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub ratings: RatingsArgs,
    /// Target item id; defaults to the most rated item.
    #[arg(long)]
    pub item: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::History)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = PolicyArg::Top)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 20)]
    pub set_size: usize,
    #[arg(long, value_name = "LO:HI", default_value = "0:5")]
    pub bounds: Bounds,
    /// Items averaged in the spectral bound.
    #[arg(long, value_enum, default_value_t = AvgArg::Reachable)]
    pub avg: AvgArg,
    #[arg(long)]
    pub eps: Option<f64>,
    #[command(flatten)]
    pub sample: UserSampleArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ColdstartArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Onboarding item ids, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub items: Vec<String>,
    #[arg(short = 'N', default_value_t = 1)]
    pub n: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub users: usize,
    #[arg(long, default_value_t = 150)]
    pub items: usize,
    /// Planted dimension.
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub density: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.8)]
    pub skew: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RatingsFormat::Csv)]
    pub format: RatingsFormat,
    /// Ratings file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the planted factors as a model bundle.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub ratings: RatingsArgs,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 30)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BiasSignArg::Residual)]
    pub bias_sign: BiasSignArg,
    /// Train without global, item and user biases.
    #[arg(long)]
    pub no_biases: bool,
    /// Relative objective decrease below which training stops.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Fraction of ratings held out to report test RMSE.
    #[arg(long, default_value_t = 0.0)]
    pub holdout: f64,
    /// Model bundle directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Configuration echoed at the top of every report.
#[derive(Serialize)]
struct RunConfig<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    args: &'a A,
    tolerances: Option<Tolerances>,
    model: Option<Manifest>,
    /// Ratings dropped because their item is not in the model.
    dropped_ratings: usize,
}

fn run_config<'a, A: Serialize>(
    command: &'static str,
    args: &'a A,
    tol: Option<Tolerances>,
    inputs: Option<&Inputs>,
) -> RunConfig<'a, A> {
    RunConfig {
        tool: "reach-audit",
        version: env!("CARGO_PKG_VERSION"),
        command,
        args,
        tolerances: tol,
        model: inputs.map(|i| i.bundle.manifest()),
        dropped_ratings: inputs.map_or(0, |i| i.dropped),
    }
}

/// Runs the tool and returns its exit code: 0 success, 1 usage, 2 input parse,
/// 3 numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> AppResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| AppError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::AuditItems(a) => cmd_audit_items(a),
        Command::Popularity(a) => cmd_popularity(a),
        Command::Recourse(a) => cmd_recourse(a),
        Command::Difficulty(a) => cmd_difficulty(a),
        Command::Coldstart(a) => cmd_coldstart(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
    })
}

fn tolerances(eps: Option<f64>) -> AppResult<Tolerances> {
    if let Some(e) = eps {
        if !(e > 0.0 && e.is_finite()) {
            return Err(AppError::Usage("--eps must be positive and finite".into()));
        }
    }
    Ok(Tolerances {
        eps_override: eps,
        ..Tolerances::default()
    })
}

fn check_n(n: usize) -> AppResult<()> {
    if n == 0 {
        return Err(AppError::Usage("-N must be at least 1".into()));
    }
    Ok(())
}

/// Reads the ratings file and applies the requested transforms, in order:
/// aggregation, log transform.
fn read_ratings(args: &RatingsArgs) -> AppResult<Option<RatingsTable>> {
    let Some(path) = &args.ratings else {
        return Ok(None);
    };
    let mut table = parse_ratings(path, args.format, args.range.map(|b| (b.lo, b.hi)))?;
    if let Some(min_total) = args.aggregate {
        table = table.aggregate_listens(min_total);
    }
    if args.log1p {
        table = table.log1p_transform()?;
    }
    Ok(Some(table))
}

struct Inputs {
    bundle: ModelBundle,
    /// Ratings re-indexed to the model's item rows.
    table: Option<RatingsTable>,
    dropped: usize,
}

impl Inputs {
    fn table(&self) -> &RatingsTable {
        self.table.as_ref().expect("ratings were required")
    }

    fn model(&self) -> &FactorModel {
        &self.bundle.model
    }

    fn history(&self, u: usize) -> AppResult<RatingHistory> {
        let table = self.table();
        let c_u = self.bundle.user_bias(&table.user_ids()[u]).unwrap_or(0.0);
        Ok(table.history(u, c_u)?)
    }
}

/// Loads the model and ratings, aligns ratings to the model's items, then
/// applies the top-items filter to both.
fn load_inputs(model: &Path, ratings: &RatingsArgs, require_ratings: bool) -> AppResult<Inputs> {
    if require_ratings && ratings.ratings.is_none() {
        return Err(AppError::Usage("--ratings is required".into()));
    }
    if ratings.top_items.is_some() && ratings.ratings.is_none() {
        return Err(AppError::Usage("--top-items needs --ratings".into()));
    }
    let mut bundle = load_model(model)?;
    let Some(raw) = read_ratings(ratings)? else {
        return Ok(Inputs {
            bundle,
            table: None,
            dropped: 0,
        });
    };
    let (mut table, dropped) = raw.align_items(&bundle.item_ids)?;
    if let Some(k) = ratings.top_items {
        if k == 0 {
            return Err(AppError::Usage("--top-items must be at least 1".into()));
        }
        let (filtered, kept) = table.top_items(k);
        bundle = bundle.restrict_items(&kept)?;
        table = filtered;
    }
    Ok(Inputs {
        bundle,
        table: Some(table),
        dropped,
    })
}

/// Users with at least one rating, sampled without replacement and returned in
/// ascending index order.
fn sample_users(table: &RatingsTable, sample: &UserSampleArgs) -> Vec<usize> {
    let mut active = vec![false; table.users()];
    for r in table.ratings() {
        active[r.user] = true;
    }
    let candidates: Vec<usize> = (0..table.users()).filter(|&u| active[u]).collect();
    if sample.users == 0 || sample.users >= candidates.len() {
        return candidates;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), sample.users)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    picked.sort_unstable();
    picked
}

/// Independent stream per user so results do not depend on scheduling.
fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64 + 1);
    rng
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn write_outputs<A: Serialize, S: Serialize, R: Serialize>(
    output: &OutputArgs,
    config: &RunConfig<'_, A>,
    summary: &S,
    records: &[R],
    series: impl FnOnce() -> Vec<Series>,
) -> AppResult<()> {
    if let Some(path) = &output.out {
        write_report(path, config, summary, records)?;
    }
    if let Some(path) = &output.plot {
        emit_plotdata(path, &series())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct ItemAuditRow {
    n: usize,
    item_id: String,
    #[serde(serialize_with = "f64_lossless")]
    delta: f64,
    aligned_reachable: bool,
    exact_top1_available: Option<bool>,
    n_ratings: Option<usize>,
    #[serde(serialize_with = "opt_f64_lossless")]
    mean_rating: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ItemAuditLine {
    n: usize,
    n_h: usize,
    n_prime: usize,
    items: usize,
    aligned_reachable: usize,
    availability_lower_bound: f64,
    exact_top1_fraction: Option<f64>,
}

fn exact_flags(model: &FactorModel, tol: &Tolerances) -> AppResult<Vec<bool>> {
    let flags = (0..model.items())
        .into_par_iter()
        .map(|i| exact_top1_available(model, i, &[], tol).map(|r| r.is_feasible()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(flags)
}

fn aligned_deltas(model: &FactorModel, n_prime: usize, block_size: usize) -> Vec<f64> {
    let m = model.items();
    let starts: Vec<usize> = (0..m).step_by(block_size).collect();
    let blocks: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| delta_block(model, s..(s + block_size).min(m), n_prime))
        .collect();
    blocks.concat()
}

pub fn cmd_audit_items(args: &AuditItemsArgs) -> AppResult<()> {
    if args.n.is_empty() {
        return Err(AppError::Usage("-N needs at least one value".into()));
    }
    for &n in &args.n {
        check_n(n)?;
    }
    if args.block_size == 0 {
        return Err(AppError::Usage("--block-size must be at least 1".into()));
    }
    let tol = tolerances(args.eps)?;
    let inputs = load_inputs(&args.model, &args.ratings, false)?;
    let model = inputs.model();
    let opts = ItemAuditOptions {
        block_size: args.block_size,
        exact: args.exact,
        tolerances: tol,
    };
    let exact = if args.exact {
        Some(exact_flags(model, &tol)?)
    } else {
        None
    };
    let popularity = inputs.table.as_ref().map(|t| (t.item_counts(), t.item_means()));

    let mut lines = Vec::new();
    let mut rows = Vec::new();
    for &n in &args.n {
        let deltas = aligned_deltas(model, n + args.nh, args.block_size);
        let mut summary = summarize_items(n, args.nh, deltas, exact.clone(), &opts)?;
        if let Some((counts, means)) = &popularity {
            summary.attach_popularity(counts, means);
        }
        println!(
            "N={} N'={}: {}/{} items aligned-reachable ({:.4}){}",
            n,
            summary.n_prime,
            summary.aligned_reachable,
            summary.items,
            summary.availability_lower_bound,
            summary
                .exact_top1_fraction
                .map_or(String::new(), |f| format!(", exact top-1 available {f:.4}"))
        );
        rows.extend(summary.per_item.iter().map(|r| ItemAuditRow {
            n,
            item_id: inputs.bundle.item_ids[r.item_id].clone(),
            delta: r.delta,
            aligned_reachable: r.aligned_reachable,
            exact_top1_available: r.exact_top1_available,
            n_ratings: r.n_ratings,
            mean_rating: r.mean_rating,
        }));
        lines.push(ItemAuditLine {
            n,
            n_h: summary.n_h,
            n_prime: summary.n_prime,
            items: summary.items,
            aligned_reachable: summary.aligned_reachable,
            availability_lower_bound: summary.availability_lower_bound,
            exact_top1_fraction: summary.exact_top1_fraction,
        });
    }
    let config = run_config("audit-items", args, Some(tol), Some(&inputs));
    write_outputs(&args.output, &config, &lines, &rows, || {
        let mut series = vec![Series::curve(
            "aligned_reachable",
            lines.iter().map(|l| (l.n as f64, l.availability_lower_bound)).collect(),
        )];
        if let Some(f) = lines.first().and_then(|l| l.exact_top1_fraction) {
            series.push(Series::curve("exact_top1", vec![(1.0, f)]));
        }
        series
    })
}

#[derive(Debug, Clone, Serialize)]
struct PopularitySummary {
    criterion: &'static str,
    items: usize,
    available: usize,
    unavailable: usize,
    #[serde(serialize_with = "opt_f64_lossless")]
    mean_count_available: Option<f64>,
    #[serde(serialize_with = "opt_f64_lossless")]
    mean_count_unavailable: Option<f64>,
    #[serde(serialize_with = "opt_f64_lossless")]
    mean_rating_available: Option<f64>,
    #[serde(serialize_with = "opt_f64_lossless")]
    mean_rating_unavailable: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct CdfRow {
    series: &'static str,
    x: f64,
    y: f64,
}

pub fn cmd_popularity(args: &PopularityArgs) -> AppResult<()> {
    check_n(args.n)?;
    let tol = tolerances(args.eps)?;
    let inputs = load_inputs(&args.model, &args.ratings, true)?;
    let model = inputs.model();
    let (flags, criterion) = if args.exact {
        (exact_flags(model, &tol)?, "exact-top1")
    } else {
        let deltas = aligned_deltas(model, args.n + args.nh, 256);
        (
            deltas.iter().map(|&d| d > 0.0).collect::<Vec<bool>>(),
            "aligned-reachable",
        )
    };
    let counts = inputs.table().item_counts();
    let means = inputs.table().item_means();
    let stats = popularity_stats(&counts, &means, &flags)?;
    let group = |want: bool, by_mean: bool| -> Vec<f64> {
        (0..flags.len())
            .filter(|&i| flags[i] == want && (!by_mean || counts[i] > 0))
            .map(|i| if by_mean { means[i] } else { counts[i] as f64 })
            .collect()
    };
    let available = flags.iter().filter(|&&f| f).count();
    let summary = PopularitySummary {
        criterion,
        items: flags.len(),
        available,
        unavailable: flags.len() - available,
        mean_count_available: mean(&group(true, false)),
        mean_count_unavailable: mean(&group(false, false)),
        mean_rating_available: mean(&group(true, true)),
        mean_rating_unavailable: mean(&group(false, true)),
    };
    println!(
        "{}/{} items available ({criterion}); mean ratings count {} vs {}",
        available,
        flags.len(),
        summary.mean_count_available.map_or("-".into(), |v| format!("{v:.2}")),
        summary.mean_count_unavailable.map_or("-".into(), |v| format!("{v:.2}")),
    );
    let cdfs: Vec<_> = stats.by_count.iter().chain(&stats.by_mean).collect();
    let rows: Vec<CdfRow> = cdfs
        .iter()
        .flat_map(|c| c.points.iter().map(|&(x, y)| CdfRow { series: c.series, x, y }))
        .collect();
    let config = run_config("popularity", args, Some(tol), Some(&inputs));
    write_outputs(&args.output, &config, &summary, &rows, || {
        cdfs.iter().map(|c| Series::from(*c)).collect()
    })
}

#[derive(Debug, Clone, Serialize)]
struct RecourseRow {
    user_id: String,
    mode: RecourseMode,
    policy: Option<PolicyArg>,
    history_len: usize,
    mutable: usize,
    unseen: usize,
    reachable: usize,
    reachable_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
struct RecourseSummary {
    mode: RecourseMode,
    policy: Option<PolicyArg>,
    users: usize,
    mean_fraction: Option<f64>,
    median_fraction: Option<f64>,
}

pub fn cmd_recourse(args: &RecourseArgs) -> AppResult<()> {
    check_n(args.n)?;
    if args.set_size == 0 {
        return Err(AppError::Usage("--set-size must be at least 1".into()));
    }
    let inputs = load_inputs(&args.model, &args.ratings, true)?;
    let model = inputs.model();
    let users = sample_users(inputs.table(), &args.sample);
    let mode = RecourseMode::from(args.mode);
    let policies: Vec<Option<PolicyArg>> = match args.mode {
        ModeArg::History => vec![None],
        ModeArg::Reaction => {
            if args.policy.is_empty() {
                return Err(AppError::Usage("--policy needs at least one value".into()));
            }
            args.policy.iter().copied().map(Some).collect()
        }
    };
    let per_user: Vec<Vec<RecourseRow>> = users
        .par_iter()
        .map(|&u| -> AppResult<Vec<RecourseRow>> {
            let hist = inputs.history(u)?;
            let mut rows = Vec::new();
            for &policy in &policies {
                let recommended = match policy {
                    None => None,
                    Some(p) => Some(reaction_set(
                        model,
                        &hist,
                        p.into(),
                        args.set_size,
                        &mut user_rng(args.sample.seed, u),
                    )?),
                };
                let rec = user_recourse(
                    model,
                    &hist,
                    mode,
                    args.n,
                    recommended.as_deref(),
                    args.bounds.lo,
                    args.bounds.hi,
                    false,
                )?;
                rows.push(RecourseRow {
                    user_id: inputs.table().user_ids()[u].clone(),
                    mode,
                    policy,
                    history_len: rec.history_len,
                    mutable: rec.mutable,
                    unseen: rec.unseen,
                    reachable: rec.reachable,
                    reachable_fraction: rec.reachable_fraction,
                });
            }
            Ok(rows)
        })
        .collect::<AppResult<_>>()?;
    let rows: Vec<RecourseRow> = per_user.into_iter().flatten().collect();
    let summaries: Vec<RecourseSummary> = policies
        .iter()
        .map(|&policy| {
            let fractions: Vec<f64> = rows
                .iter()
                .filter(|r| r.policy == policy)
                .map(|r| r.reachable_fraction)
                .collect();
            RecourseSummary {
                mode,
                policy,
                users: fractions.len(),
                mean_fraction: mean(&fractions),
                median_fraction: median(&fractions),
            }
        })
        .collect();
    for s in &summaries {
        println!(
            "{}{}: {} users, mean reachable fraction {}",
            args.mode.to_possible_value().expect("value").get_name(),
            s.policy.map_or(String::new(), |p| format!(
                "/{}",
                p.to_possible_value().expect("value").get_name()
            )),
            s.users,
            s.mean_fraction.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    let config = run_config("recourse", args, None, Some(&inputs));
    write_outputs(&args.output, &config, &summaries, &rows, || {
        policies
            .iter()
            .map(|&policy| {
                let name = match policy {
                    None => "history".to_string(),
                    Some(p) => format!("reaction:{}", p.to_possible_value().expect("value").get_name()),
                };
                let points = rows
                    .iter()
                    .filter(|r| r.policy == policy)
                    .map(|r| (r.history_len as f64, r.reachable_fraction))
                    .collect();
                Series::curve(name, points)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum TargetStatus {
    Feasible,
    Infeasible,
    /// The target is already rated or in the reaction set.
    Seen,
}

#[derive(Debug, Clone, Serialize)]
struct DifficultyRow {
    user_id: String,
    item_id: String,
    history_len: usize,
    status: TargetStatus,
    exact_cost: Option<f64>,
    feasible_point_cost: Option<f64>,
    item_bound: Option<f64>,
    alignment_holds: Option<bool>,
    b_dagger_norm: Option<f64>,
    bound: Option<f64>,
    averaged_over: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
struct DifficultySummary {
    item_id: String,
    mode: RecourseMode,
    averaging: Averaging,
    unbounded_ratings_in_bound: bool,
    users: usize,
    feasible: usize,
    infeasible: usize,
    seen: usize,
    mean_cost: Option<f64>,
    median_cost: Option<f64>,
}

fn most_rated_item(inputs: &Inputs) -> AppResult<usize> {
    let counts = inputs.table().item_counts();
    let ids = &inputs.bundle.item_ids;
    (0..counts.len())
        .min_by(|&a, &b| counts[b].cmp(&counts[a]).then_with(|| compare_ids(&ids[a], &ids[b])))
        .ok_or_else(|| AppError::Usage("model has no items".into()))
}

pub fn cmd_difficulty(args: &DifficultyArgs) -> AppResult<()> {
    if args.set_size == 0 {
        return Err(AppError::Usage("--set-size must be at least 1".into()));
    }
    let tol = tolerances(args.eps)?;
    let inputs = load_inputs(&args.model, &args.ratings, true)?;
    let model = inputs.model();
    let target = match &args.item {
        Some(id) => inputs
            .bundle
            .item_row(id)
            .ok_or_else(|| AppError::Usage(format!("item {id:?} is not in the model")))?,
        None => most_rated_item(&inputs)?,
    };
    let target_id = inputs.bundle.item_ids[target].clone();
    let mode = RecourseMode::from(args.mode);
    let averaging = Averaging::from(args.avg);
    let users = sample_users(inputs.table(), &args.sample);
    let rows: Vec<DifficultyRow> = users
        .par_iter()
        .map(|&u| -> AppResult<DifficultyRow> {
            let hist = inputs.history(u)?;
            let recommended = match args.mode {
                ModeArg::History => None,
                ModeArg::Reaction => Some(reaction_set(
                    model,
                    &hist,
                    args.policy.into(),
                    args.set_size,
                    &mut user_rng(args.sample.seed, u),
                )?),
            };
            let mut row = DifficultyRow {
                user_id: inputs.table().user_ids()[u].clone(),
                item_id: target_id.clone(),
                history_len: hist.len(),
                status: TargetStatus::Seen,
                exact_cost: None,
                feasible_point_cost: None,
                item_bound: None,
                alignment_holds: None,
                b_dagger_norm: None,
                bound: None,
                averaged_over: None,
            };
            if hist.omega().contains(&target) || recommended.as_ref().is_some_and(|r| r.contains(&target)) {
                return Ok(row);
            }
            let rec = difficulty_l1(
                model,
                &hist,
                target,
                mode,
                args.bounds.lo,
                args.bounds.hi,
                recommended.as_deref(),
                &tol,
            )?;
            let report = difficulty_bound(model, &hist, mode, recommended.as_deref(), 1, averaging)?;
            row.status = if rec.exact_feasible == Some(true) {
                TargetStatus::Feasible
            } else {
                TargetStatus::Infeasible
            };
            row.exact_cost = rec.exact_cost;
            row.feasible_point_cost = rec.feasible_point_cost;
            row.item_bound = Some(rec.bound);
            row.alignment_holds = Some(rec.alignment_holds);
            row.b_dagger_norm = Some(report.b_dagger_norm);
            row.bound = report.bound;
            row.averaged_over = Some(report.averaged_over);
            Ok(row)
        })
        .collect::<AppResult<_>>()?;
    let costs: Vec<f64> = rows.iter().filter_map(|r| r.exact_cost).collect();
    let count = |s: TargetStatus| rows.iter().filter(|r| r.status == s).count();
    let summary = DifficultySummary {
        item_id: target_id.clone(),
        mode,
        averaging,
        unbounded_ratings_in_bound: true,
        users: rows.len(),
        feasible: count(TargetStatus::Feasible),
        infeasible: count(TargetStatus::Infeasible),
        seen: count(TargetStatus::Seen),
        mean_cost: mean(&costs),
        median_cost: median(&costs),
    };
    println!(
        "item {}: {} feasible, {} infeasible, {} already seen; median l1 cost {}",
        target_id,
        summary.feasible,
        summary.infeasible,
        summary.seen,
        summary.median_cost.map_or("-".into(), |v| format!("{v:.4}"))
    );
    let config = run_config("difficulty", args, Some(tol), Some(&inputs));
    write_outputs(&args.output, &config, &summary, &rows, || {
        let cdf = reach_core::audit::Cdf::from_values("cost_cdf", costs.clone());
        vec![Series::from(&cdf)]
    })
}

#[derive(Debug, Clone, Serialize)]
struct ColdstartSummary {
    candidate: Vec<String>,
    n: usize,
    rank: usize,
    unseen: usize,
    recourse_count: usize,
    b_norm_dagger: f64,
}

pub fn cmd_coldstart(args: &ColdstartArgs) -> AppResult<()> {
    check_n(args.n)?;
    let items: Vec<&String> = args.items.iter().filter(|s| !s.trim().is_empty()).collect();
    if items.is_empty() {
        return Err(AppError::Usage("--items needs at least one item id".into()));
    }
    let inputs = load_inputs(&args.model, &RatingsArgs::none(), false)?;
    let mut rows = Vec::with_capacity(items.len());
    for id in &items {
        let row = inputs
            .bundle
            .item_row(id.trim())
            .ok_or_else(|| AppError::Usage(format!("item {id:?} is not in the model")))?;
        if rows.contains(&row) {
            return Err(AppError::Usage(format!("item {id:?} listed twice")));
        }
        rows.push(row);
    }
    let eval = coldstart_eval(inputs.model(), &rows, args.n)?;
    let summary = ColdstartSummary {
        candidate: rows.iter().map(|&r| inputs.bundle.item_ids[r].clone()).collect(),
        n: eval.n,
        rank: eval.rank,
        unseen: eval.unseen,
        recourse_count: eval.recourse_count,
        b_norm_dagger: eval.b_norm_dagger,
    };
    println!(
        "onboarding set of {} (rank {}): {} of {} unseen items reachable, |B+| = {:.6}",
        rows.len(),
        eval.rank,
        eval.recourse_count,
        eval.unseen,
        eval.b_norm_dagger
    );
    let config = run_config("coldstart", args, None, Some(&inputs));
    write_outputs(&args.output, &config, &summary, &[] as &[ColdstartSummary], Vec::new)
}

impl RatingsArgs {
    fn none() -> Self {
        RatingsArgs {
            ratings: None,
            format: RatingsFormat::Mlens,
            range: None,
            aggregate: None,
            log1p: false,
            top_items: None,
        }
    }
}

fn write_ratings(path: &Path, table: &RatingsTable, format: RatingsFormat) -> AppResult<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| AppError::io(format!("cannot write {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e: std::io::Error| AppError::io(format!("cannot write {}", path.display()), e);
    if format == RatingsFormat::Csv {
        writeln!(w, "user,item,rating").map_err(io)?;
    }
    let sep = match format {
        RatingsFormat::Mlens => "::",
        RatingsFormat::Tsv => "\t",
        RatingsFormat::Csv => ",",
    };
    for r in table.ratings() {
        writeln!(
            w,
            "{}{sep}{}{sep}{}",
            table.user_ids()[r.user],
            table.item_ids()[r.item],
            r.value
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn cmd_synth(args: &SynthArgs) -> AppResult<()> {
    let spec = SynthSpec {
        users: args.users,
        items: args.items,
        dim: args.dim,
        density: args.density,
        noise: args.noise,
        skew: args.skew,
        seed: args.seed,
    };
    let (table, truth) = generate(&spec).map_err(|e| AppError::Usage(e.to_string()))?;
    write_ratings(&args.out, &table, args.format)?;
    if let Some(dir) = &args.truth {
        let model = FactorModel::unbiased(truth.q, 0.0)?.with_users(truth.p, vec![0.0; spec.users])?;
        save_model(
            dir,
            &ModelBundle {
                model,
                item_ids: table.item_ids().to_vec(),
                user_ids: table.user_ids().to_vec(),
            },
        )?;
    }
    println!(
        "{} ratings from {} users on {} items",
        table.len(),
        table.users(),
        table.items()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct TrainSummary {
    users: usize,
    items: usize,
    train_ratings: usize,
    test_ratings: usize,
    sweeps_run: usize,
    objective: Vec<f64>,
    train_rmse: f64,
    test_rmse: Option<f64>,
}

pub fn cmd_train(args: &TrainArgs) -> AppResult<()> {
    if args.dim == 0 || args.lambda.is_nan() || args.lambda < 0.0 {
        return Err(AppError::Usage("--dim must be >= 1 and --lambda >= 0".into()));
    }
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(AppError::Usage("--holdout must be in [0, 1)".into()));
    }
    if args.ratings.top_items.is_some() {
        return Err(AppError::Usage("--top-items is not available for training".into()));
    }
    let table = read_ratings(&args.ratings)?.ok_or_else(|| AppError::Usage("--ratings is required".into()))?;
    let (train, test) = split_holdout(&table, args.holdout, args.seed)?;
    let cfg = TrainConfig {
        dim: args.dim,
        lambda: args.lambda,
        sweeps: args.sweeps,
        seed: args.seed,
        bias_sign: args.bias_sign.into(),
        fit_biases: !args.no_biases,
        tol: args.tol,
    };
    let out = als_train(&train, &cfg)?;
    let summary = TrainSummary {
        users: table.users(),
        items: table.items(),
        train_ratings: train.len(),
        test_ratings: test.len(),
        sweeps_run: out.objective.len() - 1,
        objective: out.objective.clone(),
        train_rmse: rmse(&out.model, &train)?,
        test_rmse: if test.is_empty() {
            None
        } else {
            Some(rmse(&out.model, &test)?)
        },
    };
    let bundle = ModelBundle {
        model: out.model,
        item_ids: table.item_ids().to_vec(),
        user_ids: table.user_ids().to_vec(),
    };
    save_model(&args.out, &bundle)?;
    println!(
        "trained d={} on {} ratings: train RMSE {:.4}{}",
        args.dim,
        train.len(),
        summary.train_rmse,
        summary
            .test_rmse
            .map_or(String::new(), |v| format!(", test RMSE {v:.4}"))
    );
    if let Some(path) = &args.report {
        let config = RunConfig {
            tool: "reach-audit",
            version: env!("CARGO_PKG_VERSION"),
            command: "train",
            args,
            tolerances: None,
            model: Some(bundle.manifest()),
            dropped_ratings: 0,
        };
        write_report(path, &config, &summary, &[] as &[TrainSummary])?;
    }
    Ok(())
}
