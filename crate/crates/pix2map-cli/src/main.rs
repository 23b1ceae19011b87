//! `pix2map` — command-line pipeline for cross-modal street-map
//! retrieval experiments: generate synthetic data, train the paired
//! encoders, build and grow retrieval libraries, query them, and score
//! the results.
//!
//! Conventions: results go to stdout as JSON, logs and warnings to
//! stderr. Exit code 0 on success, 1 on domain errors (bad files,
//! schema violations, capacity limits), 2 on usage errors. File
//! outputs are written atomically, and every command with an `--out`
//! also records a `run_manifest.json` describing the invocation.

mod cmds;
mod kvfile;
mod manifest;

use std::collections::{HashMap, HashSet};
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Command-line grammar problems; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Everything downstream of a well-formed invocation; exit code 1.
    #[error("{0}")]
    Domain(String),
}

/// Shorthand for mapping library errors into domain failures.
pub fn dom(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;

/// What a finished command hands back: the JSON for stdout plus
/// whether the run counts as a success (`gradcheck` prints its report
/// either way but fails the process when a check exceeds tolerance).
pub struct CmdOutput {
    pub json: serde_json::Value,
    pub ok: bool,
}

impl CmdOutput {
    pub fn ok(json: serde_json::Value) -> Self {
        Self { json, ok: true }
    }
}

struct CommandSpec {
    name: &'static str,
    /// Required positional arguments, in order.
    positionals: &'static [&'static str],
    required: &'static [&'static str],
    optional: &'static [&'static str],
    switches: &'static [&'static str],
    summary: &'static str,
}

const COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "gen",
        positionals: &[],
        required: &["config", "out"],
        optional: &["seed"],
        switches: &[],
        summary: "generate a synthetic city and paired dataset splits",
    },
    CommandSpec {
        name: "preprocess",
        positionals: &["SEGMENTS"],
        required: &["out"],
        optional: &["spacing"],
        switches: &[],
        summary: "resample a segment graph into an evenly spaced node graph",
    },
    CommandSpec {
        name: "train",
        positionals: &["DATASET"],
        required: &["config", "out"],
        optional: &["seed", "history"],
        switches: &["f64"],
        summary: "train the paired encoders on a dataset's train split",
    },
    CommandSpec {
        name: "embed",
        positionals: &["INPUT"],
        required: &["params", "out"],
        optional: &["split"],
        switches: &["f64"],
        summary: "embed a dataset split (or a directory of graphs) into a library",
    },
    CommandSpec {
        name: "augment",
        positionals: &["LIBRARY"],
        required: &["graphs", "params", "out"],
        optional: &[],
        switches: &["f64"],
        summary: "grow a library with unpaired graphs",
    },
    CommandSpec {
        name: "retrieve",
        positionals: &[],
        required: &["params", "library", "features", "k"],
        optional: &["split", "index", "out"],
        switches: &["f64"],
        summary: "rank library maps against image-feature queries",
    },
    CommandSpec {
        name: "evaluate",
        positionals: &[],
        required: &["retrievals", "library", "truths"],
        optional: &["split", "out"],
        switches: &[],
        summary: "score top-1 retrievals against ground-truth graphs",
    },
    CommandSpec {
        name: "localize",
        positionals: &[],
        required: &["params", "map", "features", "stride"],
        optional: &["split", "index", "half-extent", "out", "pgm"],
        switches: &["f64"],
        summary: "sweep query features over a map grid and emit a score heatmap",
    },
    CommandSpec {
        name: "gradcheck",
        positionals: &[],
        required: &[],
        optional: &["seed", "batches", "step"],
        switches: &[],
        summary: "finite-difference check of every loss gradient (64-bit)",
    },
];

/// Parsed command line: one subcommand, its positionals, `--flag value`
/// pairs, and bare `--switch` flags.
pub struct Args {
    pub command: String,
    positionals: Vec<String>,
    values: HashMap<String, String>,
    switches: HashSet<String>,
}

impl Args {
    fn parse(argv: &[String]) -> CliResult<Self> {
        let command = argv
            .first()
            .ok_or_else(|| CliError::Usage("missing subcommand; run `pix2map help`".into()))?
            .clone();
        let spec = COMMANDS
            .iter()
            .find(|c| c.name == command)
            .ok_or_else(|| CliError::Usage(format!("unknown subcommand `{command}`; run `pix2map help`")))?;

        let mut positionals = Vec::new();
        let mut values = HashMap::new();
        let mut switches = HashSet::new();
        let mut rest = argv[1..].iter();
        while let Some(arg) = rest.next() {
            if let Some(name) = arg.strip_prefix("--") {
                if let Some((key, value)) = name.split_once('=') {
                    values.insert(key.to_string(), value.to_string());
                } else if spec.switches.contains(&name) {
                    switches.insert(name.to_string());
                } else {
                    let value = rest.next().ok_or_else(|| {
                        CliError::Usage(format!("flag --{name} needs a value"))
                    })?;
                    values.insert(name.to_string(), value.clone());
                }
            } else {
                positionals.push(arg.clone());
            }
        }

        if positionals.len() != spec.positionals.len() {
            return Err(CliError::Usage(format!(
                "`{command}` takes {} positional argument(s) ({}), got {}",
                spec.positionals.len(),
                spec.positionals.join(", "),
                positionals.len()
            )));
        }
        for req in spec.required {
            if !values.contains_key(*req) {
                return Err(CliError::Usage(format!("`{command}` requires --{req}")));
            }
        }
        for key in values.keys() {
            if !spec.required.contains(&key.as_str()) && !spec.optional.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("`{command}` does not take --{key}")));
            }
        }
        for key in &switches {
            if !spec.switches.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("`{command}` does not take --{key}")));
            }
        }
        Ok(Self { command, positionals, values, switches })
    }

    pub fn positional(&self, index: usize) -> &str {
        &self.positionals[index]
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> &str {
        self.value(key).expect("presence checked against the command spec")
    }

    pub fn switch(&self, key: &str) -> bool {
        self.switches.contains(key)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> CliResult<Option<T>> {
        match self.value(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("--{key} expects {what}, got `{raw}`"))
            }),
        }
    }

    pub fn u64_value(&self, key: &str) -> CliResult<Option<u64>> {
        self.parsed(key, "an unsigned integer")
    }

    pub fn usize_value(&self, key: &str) -> CliResult<Option<usize>> {
        self.parsed(key, "an unsigned integer")
    }

    pub fn f64_value(&self, key: &str) -> CliResult<Option<f64>> {
        self.parsed(key, "a number")
    }
}

fn usage() -> String {
    let mut s = String::from("pix2map — cross-modal street-map retrieval pipeline\n\nCommands:\n");
    for c in COMMANDS {
        let mut line = format!("  {}", c.name);
        for p in c.positionals {
            line.push_str(&format!(" <{p}>"));
        }
        for r in c.required {
            line.push_str(&format!(" --{r} <v>"));
        }
        s.push_str(&format!("{line}\n      {}\n", c.summary));
        let extras: Vec<String> = c
            .optional
            .iter()
            .map(|o| format!("--{o} <v>"))
            .chain(c.switches.iter().map(|w| format!("--{w}")))
            .collect();
        if !extras.is_empty() {
            s.push_str(&format!("      optional: {}\n", extras.join(" ")));
        }
    }
    s.push_str("\nResults print to stdout as JSON; logs go to stderr.\n");
    s.push_str("Config files are `key = value` lines; `#` starts a comment.\n");
    s
}

fn dispatch(args: &Args) -> CliResult<CmdOutput> {
    let started = std::time::Instant::now();
    match args.command.as_str() {
        "gen" => cmds::gen(args, started),
        "preprocess" => cmds::preprocess(args, started),
        "train" => cmds::train(args, started),
        "embed" => cmds::embed(args, started),
        "augment" => cmds::augment(args, started),
        "retrieve" => cmds::retrieve(args, started),
        "evaluate" => cmds::evaluate(args, started),
        "localize" => cmds::localize(args, started),
        "gradcheck" => cmds::gradcheck(args),
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() || argv[0] == "help" || argv[0] == "--help" || argv[0] == "-h" {
        print!("{}", usage());
        return if argv.is_empty() { ExitCode::from(2) } else { ExitCode::SUCCESS };
    }

    let args = match Args::parse(&argv) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(&args) {
        Ok(out) => {
            // A consumer that closes the pipe early (`pix2map ... | head`)
            // must not turn a finished run into a panic.
            use std::io::Write;
            let text = serde_json::to_string_pretty(&out.json).expect("JSON serializes");
            if let Err(e) = writeln!(std::io::stdout(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    eprintln!("error: cannot write to stdout: {e}");
                    return ExitCode::from(1);
                }
            }
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Domain(_) => ExitCode::from(1),
            }
        }
    }
}
