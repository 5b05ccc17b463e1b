use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use chainperf::commands::{self, Report, SearchOverrides};
use chainperf::output::Format;
use chainperf::{ChainDocument, CliError};
use clap::{Args, Parser, Subcommand};
use env_logger::Env;

#[derive(Parser, Debug)]
#[command(name = "chainperf", version, about = "Performability analysis of chained network services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Chain-spec document (TOML)
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    out: Format,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-node waits, response times and CSD for an allocation
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Containers per node, e.g. 2,2,2,3 (default: thresholds)
        #[arg(long)]
        alloc: Option<String>,
    },
    /// Minimal container allocation meeting the CSD target
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Availability, CSD and cost of the document's deployments
    Availability {
        #[command(flatten)]
        common: Common,
        /// Only this deployment id
        #[arg(long)]
        deployment: Option<String>,
    },
    /// Search redundancy configurations meeting the availability target
    Search {
        #[command(flatten)]
        common: Common,
        /// Overrides the document's availability target
        #[arg(long)]
        target: Option<f64>,
        /// Search co-located (true) or homogeneous (false) deployments
        #[arg(long)]
        colocated: Option<bool>,
        /// Compare against a search without cost pruning when the space has
        /// at most this many configurations
        #[arg(long)]
        check_pruning: Option<f64>,
        /// Report only the N cheapest records
        #[arg(long)]
        max_records: Option<usize>,
    },
    /// Per-node waits and response times over a range of loads
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alloc: Option<String>,
        /// lo:hi:step in requests per second
        #[arg(long)]
        alpha_range: String,
    },
    /// Tangible CTMC of one NR as an edge list
    Ctmc {
        #[arg(long)]
        spec: PathBuf,
        /// Containers of a homogeneous NR (`3`) or of a co-located one (`2,3`)
        #[arg(long)]
        containers: String,
        /// Print the marking table instead of the edge list
        #[arg(long)]
        markings: bool,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("CHAINPERF_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Validation(format!("CHAINPERF_THREADS: `{v}` is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numerical(e.to_string()))?;
    }
    Ok(())
}

fn parse_counts(text: &str) -> Result<Vec<u32>, CliError> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("`{p}` is not a container count")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<String, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Analyze { common, alloc } => {
            let doc = ChainDocument::load(&common.spec)?;
            let alloc = alloc.map(|a| commands::parse_alloc(&a, doc.nodes.len())).transpose()?;
            commands::cmd_analyze(&doc, alloc)?.render(common.out)
        }
        Command::Optimize { common } => {
            let doc = ChainDocument::load(&common.spec)?;
            commands::cmd_optimize(&doc)?.render(common.out)
        }
        Command::Availability { common, deployment } => {
            let doc = ChainDocument::load(&common.spec)?;
            commands::cmd_availability(&doc, deployment.as_deref())?.render(common.out)
        }
        Command::Search {
            common,
            target,
            colocated,
            check_pruning,
            max_records,
        } => {
            let doc = ChainDocument::load(&common.spec)?;
            let overrides = SearchOverrides {
                availability_target: target,
                colocated,
                check_pruning,
                max_records,
            };
            commands::cmd_search(&doc, &overrides)?.render(common.out)
        }
        Command::Sweep {
            common,
            alloc,
            alpha_range,
        } => {
            let doc = ChainDocument::load(&common.spec)?;
            let alloc = alloc.map(|a| commands::parse_alloc(&a, doc.nodes.len())).transpose()?;
            let alphas = commands::parse_range(&alpha_range)?;
            commands::cmd_sweep(&doc, alloc, &alphas)?.render(common.out)
        }
        Command::Ctmc {
            spec,
            containers,
            markings,
        } => {
            let doc = ChainDocument::load(&spec)?;
            let ctmc = commands::cmd_ctmc(&doc, &parse_counts(&containers)?)?;
            let mut buf = Vec::new();
            if markings {
                ctmc.write_marking_table(&mut buf)?;
            } else {
                ctmc.write_edge_list(&mut buf)?;
            }
            Ok(String::from_utf8(buf).expect("ascii output"))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            let mut stdout = io::stdout().lock();
            if stdout.write_all(text.as_bytes()).is_err() {
                return ExitCode::from(4);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
