//! Command-line front end: structural analysis of a query, rewriting to
//! Datalog or SQL, in-process evaluation over CSV data, oracle differential
//! checking, data generation and benchmarking.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lincqa::attack::{attack_graph, find_ppjt, find_ppjt_fast, is_cforest, FastPpjt};
use lincqa::engine::{
    consistent_answers_with, eval_query, load_csv, oracle_consistent_answers, write_csv, Strategy,
};
use lincqa::hypergraph::gyo_join_tree;
use lincqa::query::{parse_query, parse_schema, ConjunctiveQuery, Schema};
use lincqa::rewrite::{render_datalog, render_sql, rewrite_boolean, rewrite_nonboolean, GroundMode};
use lincqa::workbench::{
    bench_query, fixture, gen_synthetic, gen_worst_case, BenchReport, PathQuery, SyntheticSpec,
    WorstCaseSpec, DEFAULT_RUNS,
};

#[derive(Parser)]
#[command(name = "lincqa", version, about = "Consistent query answering over primary-key repairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct QueryArgs {
    /// Query rule file; alternatively a suite fixture id via --fixture.
    #[arg(long, conflicts_with = "fixture")]
    query: Option<PathBuf>,
    /// Schema file (required with --query).
    #[arg(long, requires = "query")]
    schema: Option<PathBuf>,
    /// Built-in fixture id (q1..q7, qex, qnex, ex3, noppjt, 2path, 3path).
    #[arg(long)]
    fixture: Option<String>,
}

impl QueryArgs {
    fn load(&self) -> Result<(ConjunctiveQuery, Schema), String> {
        if let Some(id) = &self.fixture {
            let f = fixture(id).ok_or_else(|| format!("unknown fixture {id}"))?;
            return Ok((f.query, f.schema));
        }
        let query_path = self.query.as_ref().ok_or("--query or --fixture required")?;
        let schema_path = self.schema.as_ref().ok_or("--schema required")?;
        let schema_text =
            std::fs::read_to_string(schema_path).map_err(|e| format!("{}: {e}", schema_path.display()))?;
        let schema = parse_schema(&schema_text).map_err(|e| e.to_string())?;
        let query_text =
            std::fs::read_to_string(query_path).map_err(|e| format!("{}: {e}", query_path.display()))?;
        let parsed = parse_query(&query_text, &schema).map_err(|e| e.to_string())?;
        for warning in &parsed.warnings {
            eprintln!("warning: {warning}");
        }
        Ok((parsed.query, schema))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Sql,
    Datalog,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ground {
    Star,
    Naive,
}

impl From<Ground> for GroundMode {
    fn from(g: Ground) -> GroundMode {
        match g {
            Ground::Star => GroundMode::Star,
            Ground::Naive => GroundMode::Naive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Cqa,
    Possible,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Program,
    PerAnswer,
}

#[derive(Subcommand)]
enum Command {
    /// Structural report: flags, join tree, attack graph, PPJT verdict.
    Analyze {
        #[command(flatten)]
        query: QueryArgs,
        /// Write DOT renderings next to this path prefix.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Emit the consistent first-order rewriting.
    Rewrite {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long, value_enum, default_value = "star")]
        ground: Ground,
    },
    /// Evaluate a query over a CSV directory.
    Run {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "cqa")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "program")]
        strategy: StrategyArg,
        #[arg(long, value_enum, default_value = "star")]
        ground: Ground,
        /// Write the answers here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Differential check against the all-repairs oracle; exits nonzero on
    /// mismatch.
    Check {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate instances.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Time evaluation over one or more instance directories.
    Bench {
        #[command(flatten)]
        query: QueryArgs,
        /// Instance directories; repeat for a series.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        /// Write the CSV report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GenCommand {
    /// Synthetic workload instance for one of q1..q7.
    Synthetic {
        #[arg(long)]
        query: String,
        #[arg(long)]
        rsize: usize,
        #[arg(long)]
        inratio: f64,
        #[arg(long, default_value_t = 2)]
        bsize: usize,
        /// Defaults to the LINCQA_SEED environment variable, then 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Worst-case path-query instance.
    Worst {
        /// 2path or 3path.
        #[arg(long)]
        query: String,
        #[arg(long)]
        a: usize,
        #[arg(long)]
        b: usize,
        #[arg(long)]
        c: usize,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Analyze { query, dot } => {
            let (q, _schema) = query.load()?;
            analyze(&q, dot.as_deref())?;
        }
        Command::Rewrite {
            query,
            format,
            ground,
        } => {
            let (q, schema) = query.load()?;
            let program = build_program(&q, ground.into())?;
            match format {
                Format::Datalog => print!("{}", render_datalog(&program)),
                Format::Sql => print!("{}", render_sql(&program, &schema)),
            }
        }
        Command::Run {
            query,
            data,
            mode,
            strategy,
            ground,
            out,
        } => {
            let (q, schema) = query.load()?;
            let db = load_csv(&data, &schema).map_err(|e| e.to_string())?;
            let answers = match mode {
                Mode::Possible => eval_query(&q, &db),
                Mode::Oracle => oracle_consistent_answers(&q, &db),
                Mode::Cqa => consistent_answers_with(
                    &q,
                    &db,
                    match strategy {
                        StrategyArg::Program => Strategy::Program,
                        StrategyArg::PerAnswer => Strategy::PerAnswer,
                    },
                    ground.into(),
                ),
            }
            .map_err(|e| e.to_string())?;
            let rendered = answers.render();
            match out {
                Some(path) => std::fs::write(&path, rendered)
                    .map_err(|e| format!("{}: {e}", path.display()))?,
                None => print!("{rendered}"),
            }
        }
        Command::Check { query, data } => {
            let (q, schema) = query.load()?;
            let db = load_csv(&data, &schema).map_err(|e| e.to_string())?;
            let fast = consistent_answers_with(&q, &db, Strategy::Program, GroundMode::Star)
                .map_err(|e| e.to_string())?;
            let oracle = oracle_consistent_answers(&q, &db).map_err(|e| e.to_string())?;
            if fast == oracle {
                println!("ok: {} consistent answers agree with the oracle", fast.len());
            } else {
                eprintln!(
                    "mismatch: rewriting returned {} answers, oracle {}",
                    fast.len(),
                    oracle.len()
                );
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Gen(cmd) => generate(cmd)?,
        Command::Bench {
            query,
            data,
            runs,
            out,
        } => {
            let (q, schema) = query.load()?;
            let mut report = BenchReport::default();
            let label = query
                .fixture
                .clone()
                .unwrap_or_else(|| q.name.clone());
            for dir in &data {
                let db = load_csv(dir, &schema).map_err(|e| e.to_string())?;
                let rows = bench_query(&label, &q, &db, runs).map_err(|e| e.to_string())?;
                report.rows.extend(rows);
            }
            print!("{}", report.render_text());
            if let Some(path) = out {
                std::fs::write(&path, report.to_csv())
                    .map_err(|e| format!("{}: {e}", path.display()))?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn build_program(
    q: &ConjunctiveQuery,
    mode: GroundMode,
) -> Result<lincqa::rewrite::RewriteProgram, String> {
    if !q.is_connected() {
        return Err(
            "disconnected queries are evaluated per component; use `run` instead".to_string(),
        );
    }
    if q.is_boolean() {
        let cert = find_ppjt(q)
            .map_err(|e| e.to_string())?
            .ok_or("query admits no pair-pruning join tree")?;
        rewrite_boolean(q, &cert).map_err(|e| e.to_string())
    } else {
        let (frozen, _) = q.freeze_head();
        if !frozen.is_connected() {
            return Err(
                "the head-frozen query is disconnected; use `run` (per-answer evaluation)"
                    .to_string(),
            );
        }
        let cert = find_ppjt(&frozen)
            .map_err(|e| e.to_string())?
            .ok_or("query admits no pair-pruning join tree")?;
        rewrite_nonboolean(q, &cert, mode).map_err(|e| e.to_string())
    }
}

fn analyze(q: &ConjunctiveQuery, dot: Option<&Path>) -> Result<(), String> {
    println!("query: {q}");
    println!(
        "flags: boolean={} full={} self_join_free={} connected={}",
        q.is_boolean(),
        q.is_full(),
        q.is_self_join_free(),
        q.is_connected()
    );
    if !q.is_self_join_free() {
        return Err("analysis requires a self-join-free query".to_string());
    }
    let (analyzed, frozen_note) = if q.is_boolean() {
        (q.clone(), "")
    } else {
        (q.freeze_head().0, " (head variables frozen)")
    };
    match gyo_join_tree(&analyzed) {
        Err(_) => {
            println!("acyclic: false");
            return Ok(());
        }
        Ok(tree) => {
            println!("acyclic: true");
            if let Some(prefix) = dot {
                let path = dot_path(prefix, "join_tree");
                std::fs::write(&path, tree.to_dot(&analyzed.body))
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                println!("join tree dot: {}", path.display());
            }
        }
    }
    println!("cforest: {}", is_cforest(q));
    if !analyzed.is_connected() {
        println!("note: disconnected query; per-component analysis follows");
    }
    for component in if analyzed.is_connected() {
        vec![analyzed.clone()]
    } else {
        analyzed.connected_components()
    } {
        let graph = attack_graph(&component).map_err(|e| e.to_string())?;
        println!("component: {component}{frozen_note}");
        for (i, closure) in graph.key_closure.iter().enumerate() {
            let vars: Vec<&str> = closure.iter().map(String::as_str).collect();
            println!(
                "  key closure of {}: {{{}}}",
                component.body[i].relation,
                vars.join(", ")
            );
        }
        if graph.attacks.is_empty() {
            println!("  attacks: none");
        }
        for &(f, g) in &graph.attacks {
            println!(
                "  attack: {} -> {}",
                component.body[f].relation, component.body[g].relation
            );
        }
        println!("  attack graph acyclic: {}", graph.is_acyclic());
        if let Some(prefix) = dot {
            let path = dot_path(prefix, &format!("attack_{}", component.name));
            std::fs::write(&path, graph.to_dot(&component.body))
                .map_err(|e| format!("{}: {e}", path.display()))?;
            println!("  attack graph dot: {}", path.display());
        }
        match find_ppjt(&component).map_err(|e| e.to_string())? {
            Some(cert) => {
                println!(
                    "  ppjt: found, rooted at {}",
                    component.body[cert.root()].relation
                );
                print!(
                    "{}",
                    indent_lines(&cert.rooted.render_indented(&component.body), 4)
                );
            }
            None => println!("  ppjt: none"),
        }
        match find_ppjt_fast(&component).map_err(|e| e.to_string())? {
            FastPpjt::Found(cert) => println!(
                "  quadratic construction: rooted at {}",
                component.body[cert.root()].relation
            ),
            FastPpjt::NotApplicable => {
                println!("  quadratic construction: not applicable (comparable keys)")
            }
            FastPpjt::NoPpjt => println!("  quadratic construction: no ppjt"),
        }
    }
    Ok(())
}

fn indent_lines(s: &str, by: usize) -> String {
    let pad = " ".repeat(by);
    s.lines().map(|l| format!("{pad}{l}\n")).collect()
}

fn dot_path(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    if !name.is_empty() {
        name.push('_');
    }
    name.push_str(suffix);
    name.push_str(".dot");
    prefix.with_file_name(name)
}

fn env_seed() -> u64 {
    std::env::var("LINCQA_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn generate(cmd: GenCommand) -> Result<(), String> {
    match cmd {
        GenCommand::Synthetic {
            query,
            rsize,
            inratio,
            bsize,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                query_id: query.clone(),
                rsize,
                inratio,
                bsize,
                seed: seed.unwrap_or_else(env_seed),
            };
            let (db, manifest) = gen_synthetic(&spec).map_err(|e| e.to_string())?;
            write_csv(&db, &out).map_err(|e| e.to_string())?;
            let f = fixture(&query).expect("validated by the generator");
            write_fixture_files(&out, f.schema_text, f.query_text)?;
            let manifest_json =
                serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())?;
            std::fs::write(out.join("manifest.json"), manifest_json)
                .map_err(|e| e.to_string())?;
            println!(
                "wrote {} relations ({} rows each) to {}",
                manifest.relations.len(),
                rsize,
                out.display()
            );
        }
        GenCommand::Worst {
            query,
            a,
            b,
            c,
            d,
            n,
            out,
        } => {
            let path_query = match query.as_str() {
                "2path" => PathQuery::TwoPath,
                "3path" => PathQuery::ThreePath,
                other => return Err(format!("unknown worst-case query {other}")),
            };
            let spec = WorstCaseSpec {
                query: path_query,
                a,
                b,
                c,
                d,
                n,
            };
            let db = gen_worst_case(&spec).map_err(|e| e.to_string())?;
            write_csv(&db, &out).map_err(|e| e.to_string())?;
            let f = fixture(&query).expect("2path and 3path are fixtures");
            write_fixture_files(&out, f.schema_text, f.query_text)?;
            let manifest = serde_json::json!({
                "spec": spec,
                "inratio": spec.inconsistency_ratio(),
                "rows_per_relation": n,
            });
            std::fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&manifest).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            println!(
                "wrote worst-case instance (N = {n}, inRatio = {:.4}) to {}",
                spec.inconsistency_ratio(),
                out.display()
            );
        }
    }
    Ok(())
}

fn write_fixture_files(dir: &Path, schema_text: &str, query_text: &str) -> Result<(), String> {
    std::fs::write(dir.join("schema.txt"), schema_text).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("query.rule"), format!("{query_text}\n")).map_err(|e| e.to_string())?;
    Ok(())
}
