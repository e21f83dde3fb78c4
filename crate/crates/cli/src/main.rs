use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agentprov::export::{to_dot, to_prov_json, DotOptions};
use agentprov::{
    backward_lineage, decision_context, forward_impact, generate, ingest_stream, paths, root_cause, validate_graph,
    Listener, ProvGraph, Replay, Shutdown, SimConfig, Source,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod render;

#[derive(Debug, Parser)]
#[command(name = "agentprov", version, about = "Provenance store for agentic workflows")]
struct Cli {
    /// Store log file
    #[arg(long, global = true, env = "AGENTPROV_STORE")]
    store: Option<PathBuf>,

    /// Skip corrupt log records instead of refusing to open
    #[arg(long, global = true)]
    lenient: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Consume wire events into the store
    Ingest(IngestArgs),
    /// Emit the additive-manufacturing workflow as wire events
    Simulate(SimulateArgs),
    /// Answer a lineage query
    Query(QueryArgs),
    /// Write the whole store as PROV-JSON or DOT
    Export(ExportArgs),
    /// Check every stored node and edge
    Validate,
    /// Node, edge and event counts
    Stats,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct IngestSource {
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long)]
    stdin: bool,
    /// HOST:PORT to accept line streams on until interrupted
    #[arg(long)]
    listen: Option<String>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    source: IngestSource,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    fault_layer: Option<usize>,
    /// Attach telemetry and scheduling records to every activity
    #[arg(long)]
    telemetry: bool,
    /// Link activities to their site's location node
    #[arg(long)]
    locations: bool,
    /// Prefix for every generated id
    #[arg(long, default_value = "")]
    namespace: String,
    #[arg(long, conflicts_with = "connect")]
    out: Option<PathBuf>,
    /// Stream to a listening `ingest --listen`
    #[arg(long)]
    connect: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QueryFormat {
    Text,
    Json,
    ProvJson,
    Dot,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(subcommand)]
    query: Query,
    #[arg(long, global = true)]
    max_depth: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = QueryFormat::Text)]
    format: QueryFormat,
    #[arg(long, global = true, default_value_t = 10)]
    max_paths: usize,
    /// DOT only: draw used/wasGeneratedBy from cause to effect
    #[arg(long, global = true)]
    reverse_dataflow: bool,
}

#[derive(Debug, Subcommand)]
enum Query {
    /// Everything the node was derived from
    Lineage { id: String },
    /// Everything derived from the node
    Impact { id: String },
    /// Inputs, prompt, response and model behind an agent decision
    Context { id: String },
    /// Lineage and impact of a suspect node
    RootCause { id: String },
    /// Data-flow paths between two nodes
    Path { from: String, to: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    ProvJson,
    Dot,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, value_enum)]
    format: ExportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reverse_dataflow: bool,
}

/// Exit status and message for a failed command.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn data(e: impl Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

type Outcome = Result<(), Failure>;

fn store_path(cli: &Cli) -> Result<&Path, Failure> {
    cli.store.as_deref().ok_or_else(|| Failure {
        code: 1,
        message: "--store (or AGENTPROV_STORE) is required".into(),
    })
}

fn replay(cli: &Cli) -> Replay {
    if cli.lenient {
        Replay::Lenient
    } else {
        Replay::Strict
    }
}

/// Open an existing store; read-only commands never create one.
fn open_existing(cli: &Cli) -> Result<ProvGraph, Failure> {
    let path = store_path(cli)?;
    if !path.exists() {
        return Err(data(format!("store {} does not exist", path.display())));
    }
    let g = ProvGraph::open_with(path, replay(cli)).map_err(data)?;
    if g.skipped_records() > 0 {
        log::warn!("skipped {} corrupt records", g.skipped_records());
    }
    Ok(g)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(out: &mut dyn Write, text: &str) -> Outcome {
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(data)
}

fn ingest(cli: &Cli, args: &IngestArgs) -> Outcome {
    let path = store_path(cli)?;
    let graph = ProvGraph::open_with(path, replay(cli)).map_err(data)?.into_shared();
    let source = match (&args.source.file, &args.source.listen) {
        (Some(f), _) => Source::File(f.clone()),
        (_, Some(addr)) => Source::Listen(addr.clone()),
        _ => Source::Stdin,
    };
    let shutdown = Shutdown::new();
    {
        let shutdown = shutdown.clone();
        if let Err(e) = ctrlc::set_handler(move || shutdown.trigger()) {
            log::warn!("cannot install interrupt handler: {e}");
        }
    }
    let stats = match &source {
        Source::Listen(addr) => {
            let listener = Listener::bind(addr).map_err(data)?;
            eprintln!("listening on {}", listener.local_addr().map_err(data)?);
            listener.serve(&graph, &shutdown, None)
        }
        _ => ingest_stream(&graph, &source, &shutdown),
    }
    .map_err(data)?;
    graph.write().flush().map_err(data)?;
    println!("{}", render::stats_line(&stats));
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Outcome {
    let mut config = SimConfig::new(args.layers, args.seed);
    config.fault_layer = args.fault_layer;
    config.emit_telemetry = args.telemetry;
    config.emit_locations = args.locations;
    config.namespace = args.namespace.clone();
    let events = generate(&config).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    let mut out: Box<dyn Write> = match &args.connect {
        Some(addr) => Box::new(BufWriter::new(
            TcpStream::connect(addr).map_err(|e| data(format!("connect {addr}: {e}")))?,
        )),
        None => output(args.out.as_deref())?,
    };
    for e in &events {
        writeln!(out, "{}", e.to_line()).map_err(data)?;
    }
    out.flush().map_err(data)
}

fn query(cli: &Cli, args: &QueryArgs) -> Outcome {
    let g = open_existing(cli)?;
    let dot = DotOptions {
        reverse_dataflow: args.reverse_dataflow,
    };
    let as_graph = |sub: ProvGraph| -> Result<String, Failure> {
        match args.format {
            QueryFormat::ProvJson => to_prov_json(&sub).map_err(data),
            QueryFormat::Dot => Ok(to_dot(&sub, &dot)),
            _ => unreachable!("graph formats only"),
        }
    };
    let text = match &args.query {
        Query::Lineage { id } | Query::Impact { id } => {
            let sub = if matches!(args.query, Query::Lineage { .. }) {
                backward_lineage(&g, id, args.max_depth)
            } else {
                forward_impact(&g, id, args.max_depth)
            }
            .map_err(data)?;
            match args.format {
                QueryFormat::Text => render::subgraph(&g, &sub),
                QueryFormat::Json => render::json(&sub),
                _ => as_graph(sub.to_graph(&g))?,
            }
        }
        Query::RootCause { id } => {
            let rc = root_cause(&g, id).map_err(data)?;
            match args.format {
                QueryFormat::Text => render::root_cause(&g, &rc),
                QueryFormat::Json => render::json(&rc),
                _ => as_graph(rc.combined().to_graph(&g))?,
            }
        }
        Query::Context { id } => {
            let ctx = decision_context(&g, id).map_err(data)?;
            match args.format {
                QueryFormat::Text => render::context(&ctx),
                QueryFormat::Json => render::json(&ctx),
                _ => as_graph(g.induced(&ctx.node_ids()))?,
            }
        }
        Query::Path { from, to } => {
            let found = paths(&g, from, to, args.max_paths).map_err(data)?;
            match args.format {
                QueryFormat::Text => render::paths(&found),
                QueryFormat::Json => render::json(&found),
                _ => {
                    let ids = found
                        .paths
                        .iter()
                        .flat_map(|p| p.nodes.iter())
                        .cloned()
                        .collect::<Vec<_>>();
                    let edges = found
                        .paths
                        .iter()
                        .flat_map(|p| p.edges.iter())
                        .cloned()
                        .collect::<Vec<_>>();
                    as_graph(g.extract(&ids, &edges))?
                }
            }
        }
    };
    emit(&mut *output(None)?, &text)
}

fn export(cli: &Cli, args: &ExportArgs) -> Outcome {
    let g = open_existing(cli)?;
    let text = match args.format {
        ExportFormat::ProvJson => to_prov_json(&g).map_err(data)?,
        ExportFormat::Dot => to_dot(
            &g,
            &DotOptions {
                reverse_dataflow: args.reverse_dataflow,
            },
        ),
    };
    emit(&mut *output(args.out.as_deref())?, &text)
}

fn validate(cli: &Cli) -> Outcome {
    let g = open_existing(cli)?;
    let violations = validate_graph(&g);
    for v in &violations {
        println!("{v}");
    }
    println!("{} violations", violations.len());
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 2,
            message: String::new(),
        })
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Ingest(args) => ingest(cli, args),
        Command::Simulate(args) => simulate(args),
        Command::Query(args) => query(cli, args),
        Command::Export(args) => export(cli, args),
        Command::Validate => validate(cli),
        Command::Stats => {
            let g = open_existing(cli)?;
            emit(&mut *output(None)?, &render::graph_stats(&g))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
