use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ldsel::config::Config;
use ldsel::corpus::{load_corpus, save_corpus, Lexicon, LinkingInstance};
use ldsel::eval::{build_report, lowest_fraction, render_ablation, render_text, reports_to_jsonl};
use ldsel::heuristics::Heuristic;
use ldsel::kb::{EntityId, KnowledgeBase};
use ldsel::lds::{DepthMode, SearchConfig};
use ldsel::oracle::tiny_instance_suite;
use ldsel::params::ModelParams;
use ldsel::pipeline::{ablation_run, prepare, run_documents, train_all, train_stage, Stage};
use ldsel::synth::{gen_corpus, gen_kb, split};
use ldsel::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ldsel",
    version,
    about = "Global entity disambiguation with limited discrepancy search"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation, training and search.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Beam width.
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Candidates tried per discrepancy.
    #[arg(long, global = true)]
    branch_k: Option<usize>,
    /// Mention ordering heuristic.
    #[arg(long, global = true, value_enum)]
    heuristic: Option<HeuristicArg>,
    /// Search depth: 25, 50 (percent of mentions) or flex (h2 flags).
    #[arg(long, global = true, value_parser = parse_depth)]
    depth_mode: Option<DepthMode>,
    /// Worker threads for linking, evaluation and ablation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeuristicArg {
    H1,
    H2,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl SplitArg {
    fn file(self) -> &'static str {
        match self {
            SplitArg::Train => "train.jsonl",
            SplitArg::Dev => "dev.jsonl",
            SplitArg::Test => "test.jsonl",
        }
    }
}

fn parse_depth(s: &str) -> std::result::Result<DepthMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic knowledge base, lexicon and corpus splits.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        documents: Option<usize>,
    },
    /// Train one stage, or every stage in order.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// attention, local-mlp, coherence, h2, pruner or all.
        #[arg(long, default_value = "all")]
        stage: String,
        #[arg(long)]
        params: PathBuf,
    },
    /// Write per-mention predictions as JSON lines.
    Link {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ablation report for the configured search.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// JSON-lines report; the text report goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Beam {1, 5} by (h1 25%, h1 50%, h2 flexible).
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the search against brute-force oracles on tiny instances.
    OracleCheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

fn build_config(g: &GlobalArgs) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(b) = g.beam {
        cfg.search.beam = b;
    }
    if let Some(k) = g.branch_k {
        cfg.search.branch_k = k;
    }
    if let Some(h) = g.heuristic {
        cfg.search.heuristic = match h {
            HeuristicArg::H1 => Heuristic::H1,
            HeuristicArg::H2 => Heuristic::H2,
        };
    }
    if let Some(d) = g.depth_mode {
        cfg.search.depth = d;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Dataset {
    kb: KnowledgeBase,
    instances: Vec<LinkingInstance>,
}

fn load_split(dir: &Path, split: SplitArg, cfg: &Config) -> Result<Dataset> {
    let kb = KnowledgeBase::load(dir.join("kb"))?;
    let lexicon = Lexicon::load(dir.join("lexicon.jsonl"))?;
    let docs = load_corpus(dir.join(split.file()))?;
    let instances = prepare(&docs, &kb, &lexicon, cfg.candidates)?;
    Ok(Dataset { kb, instances })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.into(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Data(e.to_string()))
}

#[derive(Serialize)]
struct Prediction<'a> {
    document: &'a str,
    mention: usize,
    entity: Option<EntityId>,
    systems: Systems,
}

#[derive(Serialize)]
struct Systems {
    local: Option<EntityId>,
    one_step: Option<EntityId>,
    converged: Option<EntityId>,
    lds: Option<EntityId>,
    h1_flagged: bool,
    h2_flagged: Option<bool>,
}

fn synth(cfg: &Config, out: &Path, documents: Option<usize>) -> Result<()> {
    let mut sc = cfg.synth.clone();
    if let Some(d) = documents {
        sc.documents = d;
    }
    sc.validate()?;
    let world = gen_kb(&sc)?;
    let docs = gen_corpus(&sc, &world.kb)?;
    let (train, dev, test) = split(&docs);
    world.kb.save(out.join("kb"))?;
    world.lexicon.save(out.join("lexicon.jsonl"))?;
    save_corpus(&train, out.join("train.jsonl"))?;
    save_corpus(&dev, out.join("dev.jsonl"))?;
    save_corpus(&test, out.join("test.jsonl"))?;
    println!(
        "wrote {} entities, {} train / {} dev / {} test documents to {}",
        world.kb.len(),
        train.len(),
        dev.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn train(cfg: &Config, data: &Path, stage: &str, params_path: &Path) -> Result<()> {
    let ds = load_split(data, SplitArg::Train, cfg)?;
    let mut params = if stage == "all" || !params_path.exists() {
        ModelParams::new(ds.kb.dim())
    } else {
        ModelParams::load(params_path)?
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let reports = pool.install(|| {
        if stage == "all" {
            train_all(&mut params, &ds.instances, &ds.kb, cfg)
        } else {
            let st: Stage = stage.parse()?;
            train_stage(st, &mut params, &ds.instances, &ds.kb, cfg).map(|r| vec![r])
        }
    })?;
    params.save(params_path)?;
    for r in &reports {
        let stage = r.stage.map(|s| s.to_string()).unwrap_or_default();
        let loss = r
            .train
            .as_ref()
            .and_then(|t| t.epoch_losses.last().copied());
        match loss {
            Some(l) => println!("{stage}: final loss {l:.6}"),
            None => println!("{stage}: done"),
        }
    }
    Ok(())
}

fn link(cfg: &Config, data: &Path, params_path: &Path, split: SplitArg, out: &Path) -> Result<()> {
    let params = ModelParams::load(params_path)?;
    let ds = load_split(data, split, cfg)?;
    let runs = run_documents(&ds.instances, &ds.kb, &params, cfg, &[])?;
    let mut text = String::new();
    for (inst, run) in ds.instances.iter().zip(&runs) {
        let b = &run.baselines;
        let h1_flags = lowest_fraction(&run.h1.order, cfg.eval.h1_fraction);
        let mut rows: Vec<(usize, Option<usize>)> = run
            .mentions
            .iter()
            .copied()
            .enumerate()
            .map(|(p, m)| (m, Some(p)))
            .collect();
        rows.extend(inst.unlinkable.iter().map(|&m| (m, None)));
        rows.sort_unstable();
        for (mention, pos) in rows {
            let pick = |sol: &[usize]| pos.map(|p| run.entity(p, sol[p]));
            let systems = Systems {
                local: pick(&b.local),
                one_step: pick(&b.one_step),
                converged: pick(&b.converged),
                lds: pick(&b.lds),
                h1_flagged: pos.is_some_and(|p| h1_flags[p]),
                h2_flagged: pos.and_then(|p| run.h2.as_ref().map(|h| h.flagged[p])),
            };
            text.push_str(&json(&Prediction {
                document: &run.id,
                mention,
                entity: systems.lds,
                systems,
            })?);
            text.push('\n');
        }
    }
    write(out, &text)?;
    println!(
        "wrote predictions for {} documents to {}",
        runs.len(),
        out.display()
    );
    Ok(())
}

fn eval(
    cfg: &Config,
    data: &Path,
    params_path: &Path,
    split: SplitArg,
    out: Option<&Path>,
) -> Result<()> {
    let params = ModelParams::load(params_path)?;
    let ds = load_split(data, split, cfg)?;
    let runs = run_documents(&ds.instances, &ds.kb, &params, cfg, &[])?;
    let config =
        serde_json::to_value(cfg.search_config()).map_err(|e| Error::Data(e.to_string()))?;
    let report = build_report(
        split.file().trim_end_matches(".jsonl"),
        &runs,
        cfg.eval.h1_fraction,
        cfg.eval.rarity_bins,
        config,
    )?;
    if let Some(out) = out {
        write(out, &reports_to_jsonl(std::slice::from_ref(&report))?)?;
    }
    print!("{}", render_text(&report));
    Ok(())
}

fn ablation_grid(cfg: &Config) -> Vec<(String, SearchConfig)> {
    let mut grid = Vec::new();
    for beam in [1, 5] {
        for (heuristic, depth) in [
            (Heuristic::H1, DepthMode::Quarter),
            (Heuristic::H1, DepthMode::Half),
            (Heuristic::H2, DepthMode::Flexible),
        ] {
            let sc = SearchConfig {
                beam,
                heuristic,
                depth,
                ..cfg.search_config()
            };
            let h = if heuristic == Heuristic::H1 {
                "h1"
            } else {
                "h2"
            };
            grid.push((format!("b={beam} {h} depth={depth}"), sc));
        }
    }
    grid
}

fn ablate(
    cfg: &Config,
    data: &Path,
    params_path: &Path,
    split: SplitArg,
    out: Option<&Path>,
) -> Result<()> {
    let params = ModelParams::load(params_path)?;
    let ds = load_split(data, split, cfg)?;
    let reports = ablation_run(&ds.instances, &ds.kb, &params, cfg, &ablation_grid(cfg))?;
    if let Some(out) = out {
        write(out, &reports_to_jsonl(&reports)?)?;
    }
    print!("{}", render_ablation(&reports));
    Ok(())
}

fn oracle_check(cfg: &Config, instances: usize, samples: usize) -> Result<()> {
    let r = tiny_instance_suite(instances, samples, cfg.seed)?;
    println!(
        "search matched the exhaustive optimum on {}/{} instances (max gap {:.3e})",
        r.search_matches, r.instances, r.max_search_gap
    );
    println!(
        "{} of {} sampled assignments beat the exact maximizer",
        r.argmax_violations, r.sampled_assignments
    );
    if r.passed() {
        println!("oracle check passed");
        Ok(())
    } else {
        Err(Error::Data("oracle check failed".into()))
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.global)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    match cli.command {
        Command::Synth { out, documents } => synth(&cfg, &out, documents),
        Command::Train {
            data,
            stage,
            params,
        } => train(&cfg, &data, &stage, &params),
        Command::Link {
            data,
            params,
            split,
            out,
        } => link(&cfg, &data, &params, split, &out),
        Command::Eval {
            data,
            params,
            split,
            out,
        } => eval(&cfg, &data, &params, split, out.as_deref()),
        Command::Ablate {
            data,
            params,
            split,
            out,
        } => ablate(&cfg, &data, &params, split, out.as_deref()),
        Command::OracleCheck { instances, samples } => oracle_check(&cfg, instances, samples),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
