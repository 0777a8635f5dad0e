//! `cvp` command line.
//!
//! Exit codes: 0 on success, 1 when the input is well-formed but fails a
//! check (invalid graph, plan violations, `fmt --check` mismatch), 2 on usage,
//! I/O or parse errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use cvp_core::dsl::{self, ParseError};
use cvp_core::plan::{self, AnchorPolicy, Plan};
use cvp_core::shift::{self, ShiftConfig};
use cvp_core::CausalGraph;

use crate::api::{self, ServeConfig, DEFAULT_MAX_BODY_BYTES};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "cvp", version, about = "Causal workflow graphs: validate, query, check plans, run shift experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Parents,
    Blanket,
}

impl From<PolicyArg> for AnchorPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Parents => AnchorPolicy::ParentsOnly,
            PolicyArg::Blanket => AnchorPolicy::MarkovBlanket,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a graph file (DSL or JSON) and report structural problems.
    Validate { file: PathBuf },
    /// Print parents, children, spouses and the Markov blanket of a node.
    Blanket { file: PathBuf, node: String },
    /// Check a JSON plan against a graph.
    CheckPlan {
        graph: PathBuf,
        plan: PathBuf,
        #[arg(long, value_enum, default_value = "parents")]
        policy: PolicyArg,
    },
    /// Run the distribution-shift experiment.
    Experiment {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long = "sigma-s")]
        sigma_s: Option<f64>,
        #[arg(long)]
        flip: Option<f64>,
        #[arg(long = "n-train")]
        n_train: Option<usize>,
        #[arg(long = "n-test")]
        n_test: Option<usize>,
        /// Graph to derive the anchored model's mask from (defaults to the
        /// built-in C -> Y world).
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Write the `model,env,accuracy` summary here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print a graph in canonical form.
    Fmt {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        to: Format,
        /// Exit 1 if the file is not already canonical.
        #[arg(long)]
        check: bool,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "CVP_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long = "data-dir", env = "CVP_DATA_DIR", default_value = "./cvp-data")]
        data_dir: PathBuf,
        #[arg(long = "max-body-bytes", default_value_t = DEFAULT_MAX_BODY_BYTES)]
        max_body_bytes: usize,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn error(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_ERROR,
            message: message.into(),
        }
    }
}

type Outcome = Result<u8, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::error(format!("{}: {e}", path.display())))
}

fn render_parse_errors(path: &Path, errors: &[ParseError]) -> String {
    let lines: Vec<String> = errors.iter().map(|e| format!("{}:{e}", path.display())).collect();
    lines.join("\n")
}

fn load_graph(path: &Path) -> Result<CausalGraph, Failure> {
    let bytes = read_file(path)?;
    dsl::parse_any(&bytes)
        .map(|p| p.graph)
        .map_err(|errs| Failure::error(render_parse_errors(path, &errs)))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::error(format!("write failed: {e}")))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn execute(command: Command, out: &mut dyn Write) -> Outcome {
    match command {
        Command::Validate { file } => {
            let bytes = read_file(&file)?;
            match dsl::parse_any(&bytes) {
                Ok(parsed) => {
                    for w in &parsed.warnings {
                        emit(out, &format!("warning: {}: {}\n", w.span, w.message))?;
                    }
                    let g = &parsed.graph;
                    emit(
                        out,
                        &format!("ok: graph `{}` ({} nodes, {} edges)\n", g.name(), g.node_count(), g.edge_count()),
                    )?;
                    Ok(EXIT_OK)
                }
                Err(errs) => {
                    emit(out, &render_parse_errors(&file, &errs))?;
                    emit(out, "\n")?;
                    Ok(EXIT_CHECK_FAILED)
                }
            }
        }
        Command::Blanket { file, node } => {
            let graph = load_graph(&file)?;
            let blanket = graph.blanket(&node).map_err(|e| Failure::error(e.to_string()))?;
            emit(out, &to_json(&blanket))?;
            Ok(EXIT_OK)
        }
        Command::CheckPlan { graph, plan: plan_path, policy } => {
            let graph = load_graph(&graph)?;
            let bytes = read_file(&plan_path)?;
            let plan: Plan = serde_json::from_slice(&bytes)
                .map_err(|e| Failure::error(format!("{}: {e}", plan_path.display())))?;
            let report = plan::check_plan(&graph, &plan, policy.into());
            emit(out, &to_json(&report))?;
            Ok(if report.ok { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Experiment {
            seed,
            alpha,
            sigma_s,
            flip,
            n_train,
            n_test,
            graph,
            csv,
        } => {
            let mut config = ShiftConfig::default();
            if let Some(v) = seed {
                config.seed = v;
            }
            if let Some(v) = alpha {
                config.spurious_strength = v;
            }
            if let Some(v) = sigma_s {
                config.spurious_noise_sd = v;
            }
            if let Some(v) = flip {
                config.flip_prob = v;
            }
            if let Some(v) = n_train {
                config.n_train = v;
            }
            if let Some(v) = n_test {
                config.n_test = v;
            }
            let graph = match graph {
                Some(path) => load_graph(&path)?,
                None => shift::shift_world(),
            };
            let report = shift::run_experiment(&config, &graph).map_err(|e| Failure::error(e.to_string()))?;
            if let Some(path) = csv {
                fs::write(&path, report.to_csv())
                    .map_err(|e| Failure::error(format!("{}: {e}", path.display())))?;
            }
            emit(out, &to_json(&report))?;
            Ok(EXIT_OK)
        }
        Command::Fmt { file, to, check } => {
            let bytes = read_file(&file)?;
            let parsed = dsl::parse_any(&bytes).map_err(|errs| Failure::error(render_parse_errors(&file, &errs)))?;
            let canonical = match to {
                Format::Text => dsl::serialize_text(&parsed.graph),
                Format::Json => dsl::serialize_json(&parsed.graph) + "\n",
            };
            if check {
                if canonical.as_bytes() == bytes.as_slice() {
                    return Ok(EXIT_OK);
                }
                emit(out, &format!("{} is not in canonical form\n", file.display()))?;
                return Ok(EXIT_CHECK_FAILED);
            }
            emit(out, &canonical)?;
            Ok(EXIT_OK)
        }
        Command::Serve {
            port,
            data_dir,
            max_body_bytes,
        } => {
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Failure::error(e.to_string()))?;
            runtime
                .block_on(api::serve(ServeConfig {
                    port,
                    data_dir,
                    max_body_bytes,
                }))
                .map_err(|e| Failure::error(e.to_string()))?;
            Ok(EXIT_OK)
        }
    }
}
