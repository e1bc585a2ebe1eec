mod workspace;

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypograph_core::agent_runtime::PromptStore;
use hypograph_core::evalkit::{evaluate_runs, TruthTable};
use hypograph_core::evolution::{evolve_runs, load_library_or_default, persist_library, SharedLibrary};
use hypograph_core::explorer::{load_embeddings, train_projections, EmbeddingTable, ProjectionParams};
use hypograph_core::kg_store::{load_triples, KnowledgeGraph, QueryDirection, RepurposingQuery, TripleFormat};
use hypograph_core::orchestrator::{load_result, run_investigation, InvestigationInputs, OrchestratorError};
use hypograph_core::InvestigationResult;

use workspace::{require_file, WorkspaceConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "hypograph", version, about = "Rank repurposing hypotheses by adversarial evidence-graph debate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct WorkspaceArg {
    /// Workspace file.
    #[arg(short, long, default_value = "hypograph.toml")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Load a triple file and print the load report as JSON.
    Ingest {
        file: PathBuf,
        #[arg(long, default_value = "tsv")]
        format: String,
    },
    /// Fit the explorer's projections and write the params file.
    TrainExplorer {
        /// Workspace supplying kg, embeddings, params and training settings.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kg: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one investigation, or one per line of `--queries-file`.
    Run(RunArgs),
    /// Audit finished runs, patch prompts and distill heuristics.
    Evolve {
        #[command(flatten)]
        ws: WorkspaceArg,
        #[arg(required = true)]
        runs: Vec<String>,
        /// Minimum top-1 score for a run to count.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        budget: Option<u32>,
        /// Replay this scenario instead of the workspace backend.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Score runs against a truth file.
    Eval {
        #[command(flatten)]
        ws: WorkspaceArg,
        #[arg(required = true)]
        runs: Vec<String>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
        ks: Vec<usize>,
        /// Where the JSON report goes. Defaults to `<runs>/metrics.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a run's final evidence graph.
    Export {
        #[command(flatten)]
        ws: WorkspaceArg,
        run: String,
        #[arg(long, value_enum, default_value = "json")]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Json,
    Dot,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    ws: WorkspaceArg,
    /// Query entity id.
    #[arg(long, required_unless_present = "queries_file")]
    query: Option<String>,
    /// Target relation.
    #[arg(long, default_value = "indication")]
    relation: String,
    /// Inferred from the query entity's type when absent.
    #[arg(long)]
    direction: Option<QueryDirection>,
    /// Tab-separated `entity relation [direction]` lines; run ids are the entities.
    #[arg(long, conflicts_with = "query")]
    queries_file: Option<PathBuf>,
    /// Defaults to the query entity id.
    #[arg(long, conflicts_with = "queries_file")]
    run_id: Option<String>,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
    /// Replay this scenario instead of the workspace backend.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long)]
    t_max: Option<u32>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    j: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { file, format } => cmd_ingest(&file, &format),
        Command::TrainExplorer {
            config,
            kg,
            embeddings,
            out,
            epochs,
            dim,
            seed,
        } => cmd_train(config.as_deref(), kg, embeddings, out, epochs, dim, seed),
        Command::Run(args) => cmd_run(&args),
        Command::Evolve {
            ws,
            runs,
            threshold,
            budget,
            scenario,
        } => cmd_evolve(&WorkspaceConfig::load(&ws.config)?, &runs, threshold, budget, scenario.as_deref()),
        Command::Eval { ws, runs, truth, ks, out } => cmd_eval(&WorkspaceConfig::load(&ws.config)?, &runs, truth, &ks, out),
        Command::Export { ws, run, format, out } => cmd_export(&WorkspaceConfig::load(&ws.config)?, &run, format, out),
    }
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::data(format!("cannot read {what} {}: {e}", path.display())))
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_kg(path: &Path, format: &str) -> Result<KnowledgeGraph> {
    let format: TripleFormat = format.parse().map_err(CliError::Data)?;
    let (kg, report) = load_triples(open(path, "triple file")?, format)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if report.warnings > 0 {
        log::warn!("{}: {} rows skipped", path.display(), report.warnings);
    }
    Ok(kg)
}

fn load_emb(path: &Path) -> Result<EmbeddingTable> {
    load_embeddings(open(path, "embeddings")?).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn cmd_ingest(file: &Path, format: &str) -> Result<()> {
    let format: TripleFormat = format.parse().map_err(CliError::Data)?;
    let (_, report) =
        load_triples(open(file, "triple file")?, format).map_err(|e| CliError::data(format!("{}: {e}", file.display())))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn cmd_train(
    config: Option<&Path>,
    kg: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    dim: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let ws = config.map(WorkspaceConfig::load).transpose()?;
    let pick = |flag: Option<PathBuf>, from_ws: fn(&WorkspaceConfig) -> &PathBuf, name: &str| {
        flag.or_else(|| ws.as_ref().map(|w| from_ws(w).clone()))
            .ok_or_else(|| CliError::data(format!("no {name} path: pass --{name} or --config")))
    };
    let kg_path = pick(kg, |w| &w.kg, "kg")?;
    let emb_path = pick(embeddings, |w| &w.embeddings, "embeddings")?;
    let out = pick(out, |w| &w.params, "out")?;
    let format = ws.as_ref().map_or("tsv", |w| w.kg_format.as_str());
    let mut train = ws.as_ref().map(|w| w.train).unwrap_or_default();
    if let Some(e) = epochs {
        train.epochs = e;
    }
    if let Some(d) = dim {
        train.d = d;
    }
    if let Some(s) = seed {
        train.seed = s;
    }

    let kg = load_kg(&kg_path, format)?;
    let emb = load_emb(&emb_path)?;
    let params = train_projections(&kg, &emb, train).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(&out, params.to_json()).map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    let last = params.loss_log.last().map_or("n/a".to_string(), |l| format!("{l:.6}"));
    println!("wrote {} ({} epochs, final loss {last})", out.display(), train.epochs);
    Ok(())
}

/// Parsed `--queries-file` line.
struct QueryLine {
    entity: String,
    relation: String,
    direction: Option<QueryDirection>,
}

fn read_queries(path: &Path) -> Result<Vec<QueryLine>> {
    let mut out = Vec::new();
    for (i, line) in open(path, "queries file")?.lines().enumerate() {
        let line = line.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let bad = |why: String| CliError::data(format!("{} line {}: {why}", path.display(), i + 1));
        if cols.len() < 2 || cols.len() > 3 {
            return Err(bad("expected `entity<TAB>relation[<TAB>direction]`".into()));
        }
        let direction = cols.get(2).map(|d| d.parse()).transpose().map_err(bad)?;
        out.push(QueryLine {
            entity: cols[0].into(),
            relation: cols[1].into(),
            direction,
        });
    }
    Ok(out)
}

struct Loaded {
    kg: KnowledgeGraph,
    embeddings: EmbeddingTable,
    params: ProjectionParams,
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let ws = WorkspaceConfig::load(&args.ws.config)?;
    require_file(&ws.kg, "kg")?;
    require_file(&ws.embeddings, "embeddings")?;
    require_file(&ws.params, "params")?;
    let params_text = fs::read_to_string(&ws.params).map_err(|e| CliError::data(format!("{}: {e}", ws.params.display())))?;
    let loaded = Loaded {
        kg: load_kg(&ws.kg, &ws.kg_format)?,
        embeddings: load_emb(&ws.embeddings)?,
        params: ProjectionParams::from_json(&params_text)
            .map_err(|e| CliError::data(format!("{}: {e}", ws.params.display())))?,
    };

    let mut config = ws.investigation.clone();
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(b) = args.budget {
        config.call_budget = b;
    }
    if let Some(t) = args.t_max {
        config.t_max = t;
    }
    if let Some(k) = args.k {
        config.k_seeds = k;
    }
    if let Some(j) = args.j {
        config.heuristic_j = j;
    }

    let queries = match (&args.queries_file, &args.query) {
        (Some(path), _) => read_queries(path)?,
        (None, Some(q)) => vec![QueryLine {
            entity: q.clone(),
            relation: args.relation.clone(),
            direction: args.direction,
        }],
        (None, None) => return Err(CliError::data("pass --query or --queries-file")),
    };
    let prompts = PromptStore::open(&ws.prompts).map_err(|e| CliError::data(format!("{}: {e}", ws.prompts.display())))?;
    let library = load_library_or_default(&ws.library).map_err(|e| CliError::data(e.to_string()))?;
    let library = SharedLibrary::new(library, Some(ws.library.clone()));

    // Later queries still run after a failure; the worst outcome decides the exit.
    let mut worst: Option<CliError> = None;
    for q in &queries {
        let run_id = args.run_id.clone().unwrap_or_else(|| q.entity.clone());
        let outcome = run_one(&ws, args, &loaded, &config, &prompts, &library, q, &run_id);
        match outcome {
            Ok(result) => print!("{}", ranked_table(&result)),
            Err(e) => {
                if queries.len() > 1 {
                    eprintln!("error: run {run_id}: {e}");
                }
                if worst.as_ref().is_none_or(|w| e.code() > w.code()) {
                    worst = Some(e);
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some(e) if queries.len() == 1 => Err(e),
        Some(CliError::Backend(_)) => Err(CliError::Backend("at least one run hit a backend failure".into())),
        Some(_) => Err(CliError::data("at least one query could not be run")),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    ws: &WorkspaceConfig,
    args: &RunArgs,
    loaded: &Loaded,
    config: &hypograph_core::InvestigationConfig,
    prompts: &PromptStore,
    library: &SharedLibrary,
    q: &QueryLine,
    run_id: &str,
) -> Result<InvestigationResult> {
    let query = match q.direction {
        Some(d) => RepurposingQuery::new(&loaded.kg, &q.entity, &q.relation, d),
        None => RepurposingQuery::infer(&loaded.kg, &q.entity, &q.relation),
    }
    .map_err(|e| CliError::data(e.to_string()))?;
    let run_dir = ws.run_dir(run_id)?;
    if run_dir.exists() {
        if !args.force {
            return Err(CliError::data(format!("{} exists; pass --force to replace it", run_dir.display())));
        }
        fs::remove_dir_all(&run_dir).map_err(|e| CliError::data(format!("{}: {e}", run_dir.display())))?;
    }
    let runtime = ws.runtime(args.scenario.as_deref(), config.call_budget)?;
    let inputs = InvestigationInputs {
        run_id: run_id.to_string(),
        query,
        kg: &loaded.kg,
        embeddings: &loaded.embeddings,
        params: &loaded.params,
        prompts,
        library: Some(library),
        run_dir: Some(run_dir.clone()),
    };
    run_investigation(&inputs, config, &runtime).map_err(|e| match e {
        OrchestratorError::Backend(inner) => {
            CliError::Backend(format!("{inner} (partial artifacts in {})", run_dir.display()))
        }
        other => CliError::data(other.to_string()),
    })
}

fn ranked_table(r: &InvestigationResult) -> String {
    let mut out = format!(
        "run {} ({}): {} after {} round(s), {} live call(s)\n",
        r.run_id,
        r.query_name,
        r.termination_reason.as_str(),
        r.rounds_executed,
        r.live_calls
    );
    out.push_str(&format!(
        "{:<5} {:<5} {:<16} {:>7} {:>8} {:>7} {:>7} {:>6}  {}\n",
        "rank", "id", "candidate", "score", "support", "refute", "c_mech", "d_path", "name"
    ));
    for e in &r.ranked {
        let b = &e.breakdown;
        out.push_str(&format!(
            "{:<5} {:<5} {:<16} {:>7.4} {:>8.3} {:>7.3} {:>7.3} {:>6}  {}\n",
            e.rank, e.hypothesis_id, e.candidate, e.score, b.sum_support, b.sum_refute, b.c_mech, b.d_path, e.candidate_name
        ));
    }
    out
}

fn cmd_evolve(
    ws: &WorkspaceConfig,
    runs: &[String],
    threshold: Option<f64>,
    budget: Option<u32>,
    scenario: Option<&Path>,
) -> Result<()> {
    let dirs = runs.iter().map(|r| ws.existing_run(r)).collect::<Result<Vec<_>>>()?;
    let runtime = ws.runtime(scenario, budget.unwrap_or(ws.investigation.call_budget))?;
    let mut prompts =
        PromptStore::open(&ws.prompts).map_err(|e| CliError::data(format!("{}: {e}", ws.prompts.display())))?;
    let mut library = load_library_or_default(&ws.library).map_err(|e| CliError::data(e.to_string()))?;
    let threshold = threshold.unwrap_or(ws.evolve.quality_threshold);
    let summary =
        evolve_runs(&runtime, &mut prompts, &mut library, &dirs, threshold).map_err(|e| CliError::data(e.to_string()))?;

    for (run, why) in &summary.skipped {
        println!("skipped {run}: {why}");
    }
    let nothing = summary.prompt_updates.is_empty() && summary.added.is_empty() && summary.dropped.is_empty();
    if summary.skipped.len() == dirs.len() {
        println!("no qualifying reports (quality threshold {threshold}); nothing changed");
        return Ok(());
    }
    if let Some(why) = &summary.distill_failure {
        println!("distillation failed: {why}");
    }
    for (role, version, note) in &summary.prompt_updates {
        println!("prompt {role} -> v{version} ({note})");
    }
    if !nothing {
        prompts.save().map_err(|e| CliError::data(format!("{}: {e}", ws.prompts.display())))?;
        persist_library(&library, &ws.library).map_err(|e| CliError::data(e.to_string()))?;
    }
    println!(
        "library v{} -> v{}: {} added, {} dropped, {} total",
        summary.library_version_before,
        summary.library_version_after,
        summary.added.len(),
        summary.dropped.len(),
        library.len()
    );
    for h in &summary.added {
        println!("  + {} {}", h.id, h.rule_text());
    }
    for (text, why) in &summary.dropped {
        println!("  - {text} ({why})");
    }
    Ok(())
}

fn cmd_eval(ws: &WorkspaceConfig, runs: &[String], truth: Option<PathBuf>, ks: &[usize], out: Option<PathBuf>) -> Result<()> {
    let truth_path = truth
        .or_else(|| ws.truth.clone())
        .ok_or_else(|| CliError::data("no truth file: pass --truth or set `truth` in the workspace"))?;
    let truth = TruthTable::from_tsv(open(&truth_path, "truth file")?)
        .map_err(|e| CliError::data(format!("{}: {e}", truth_path.display())))?;
    let results = runs
        .iter()
        .map(|r| load_result(&ws.existing_run(r)?).map_err(CliError::Data))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_runs(&results, &truth, ks).map_err(|e| CliError::data(e.to_string()))?;
    let out = out.unwrap_or_else(|| ws.runs.join("metrics.json"));
    fs::write(&out, report.to_json()).map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_export(ws: &WorkspaceConfig, run: &str, format: ExportFormat, out: Option<PathBuf>) -> Result<()> {
    let result = load_result(&ws.existing_run(run)?).map_err(CliError::Data)?;
    let graph = result.graph().map_err(|e| CliError::data(e.to_string()))?;
    let text = match format {
        ExportFormat::Json => graph.to_snapshot_json(),
        ExportFormat::Dot => graph.to_dot(),
    };
    write_out(out.as_deref(), &text)
}
