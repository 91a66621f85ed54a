//! `avseq`: samplers, instruments, tree tools and verification suites.
//!
//! ```text
//! avseq simulate --model rademacher --instrument signwalk --alpha 0.05 --T 1000
//! avseq verify ville --seed 1
//! avseq tree snell golden.tree
//! ```
//!
//! Exit codes: 0 success, 1 a check failed (or a payload is unsafe),
//! 2 invalid configuration or input.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use avseq::gaussian::mixture_cs_intervals;
use avseq::harness::{self, EInstrument, RunConfig, Scale, Suite};
use avseq::instruments::TestSource;
use avseq::symmetry::{DyadicPValueState, FactorShape, SignWalkState};
use avseq::tree::{self, Payload};
use avseq::{EProcess, NullModel, SamplePath, SequentialTest, VarianceRule};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "avseq", version, about = "Anytime-valid sequential inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one path and stream an instrument's values along it.
    Simulate(SimulateArgs),
    /// Run a verification suite and emit its report.
    Verify(VerifyArgs),
    /// Exact computations on a probability-tree file.
    Tree(TreeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Instrument {
    Signwalk,
    GaussianNm,
    MixtureCs,
    ExpNsm,
    MirroredNm,
    Arctan,
    DyadicP,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RowFormat {
    Csv,
    Jsonl,
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    /// Null model, e.g. `rademacher`, `gauss:0,1`, `twopoint:0,0.5`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum)]
    instrument: Option<Instrument>,
    /// Level of the test or confidence sequence.
    #[arg(long, required_unless_present_any = ["config", "schema"])]
    alpha: Option<f64>,
    /// Horizon.
    #[arg(long = "T", visible_alias = "horizon")]
    horizon: Option<usize>,
    /// Null value `m` tested by the e-processes (default 0).
    #[arg(long)]
    center: Option<f64>,
    #[arg(long, env = "AVSEQ_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<RowFormat>,
    /// Write rows here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// JSON file with the same fields; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the output schema and exit.
    #[arg(long)]
    schema: bool,
}

/// `simulate` settings as read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    model: Option<String>,
    instrument: Option<Instrument>,
    alpha: Option<f64>,
    #[serde(alias = "T")]
    horizon: Option<usize>,
    center: Option<f64>,
    seed: Option<u64>,
    format: Option<RowFormat>,
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(clap::Args, Debug)]
struct VerifyArgs {
    /// One of: ville, anticoncentration, uniformity, domination,
    /// stopping-matrix, tree-exact, appendix-c.
    #[arg(value_parser = parse_suite, required_unless_present = "schema")]
    suite: Option<Suite>,
    #[arg(long, env = "AVSEQ_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Reduced path counts and horizons.
    #[arg(long)]
    quick: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Include wall time in the report (makes it run-dependent).
    #[arg(long)]
    wall_time: bool,
    #[arg(long)]
    schema: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TreeOp {
    /// Snell envelope `L` with Doob decomposition `M`, `A`.
    Snell,
    /// Probabilities of the implied alternative `dP = M dQ`.
    Implied,
    /// Dominating NM (e-payload) or closed max-martingale (p-payload).
    Admissibilize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PayloadKind {
    E,
    P,
}

#[derive(clap::Args, Debug)]
struct TreeArgs {
    #[arg(value_enum, required_unless_present = "schema")]
    op: Option<TreeOp>,
    #[arg(required_unless_present = "schema")]
    file: Option<PathBuf>,
    /// Payload column (default: the first one).
    #[arg(long)]
    column: Option<String>,
    /// Payload type for `admissibilize`.
    #[arg(long, value_enum, default_value = "e")]
    kind: PayloadKind,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    schema: bool,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: avseq::Error| e.to_string())
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn check(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<avseq::Error> for Failure {
    fn from(e: avseq::Error) -> Self {
        Failure::config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::Tree(a) => tree_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            if f.code == 2 {
                eprintln!();
                eprintln!("{}", Cli::command().render_usage());
            }
            ExitCode::from(f.code)
        }
    }
}

fn emit(output: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Failure::config(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::config(format!("cannot write to stdout: {e}"))),
    }
}

fn print_schema(value: serde_json::Value) -> Result<u8, Failure> {
    let text = serde_json::to_string_pretty(&value).expect("static json") + "\n";
    emit(None, &text)?;
    Ok(0)
}

// ---------------------------------------------------------------- simulate

/// Fully resolved `simulate` configuration.
#[derive(Debug)]
struct SimConfig {
    model: NullModel,
    instrument: Instrument,
    alpha: f64,
    horizon: usize,
    center: f64,
    seed: u64,
    format: RowFormat,
    output: Option<PathBuf>,
}

fn resolve(a: SimulateArgs) -> Result<SimConfig, Failure> {
    let file: SimulateFile = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("bad config {}: {e}", p.display())))?
        }
        None => SimulateFile::default(),
    };
    let model = a.model.or(file.model).ok_or_else(|| Failure::config("missing --model"))?;
    let model: NullModel = model.parse()?;
    let instrument = a.instrument.or(file.instrument).ok_or_else(|| Failure::config("missing --instrument"))?;
    let alpha = a.alpha.or(file.alpha).ok_or_else(|| Failure::config("missing --alpha"))?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Failure::config(format!("--alpha {alpha} is not in (0,1)")));
    }
    let horizon = a.horizon.or(file.horizon).unwrap_or(1000);
    if horizon == 0 {
        return Err(Failure::config("--T must be at least 1"));
    }
    let center = a.center.or(file.center).unwrap_or(0.0);
    if !center.is_finite() {
        return Err(Failure::config("--center must be finite"));
    }
    if instrument == Instrument::Signwalk {
        avseq::symmetry::integer_threshold(alpha)?;
    }
    Ok(SimConfig {
        model,
        instrument,
        alpha,
        horizon,
        center,
        seed: a.seed.or(file.seed).unwrap_or(0),
        format: a.format.or(file.format).unwrap_or(RowFormat::Csv),
        output: a.output.or(file.output),
    })
}

/// Columns emitted by `simulate` for each instrument.
fn columns(instrument: Instrument) -> &'static [&'static str] {
    match instrument {
        Instrument::Signwalk => &["t", "x", "value", "rejected"],
        Instrument::MixtureCs => &["t", "center", "radius", "lower", "upper"],
        Instrument::DyadicP => &["t", "x", "p", "rejected"],
        _ => &["t", "x", "e", "p", "rejected"],
    }
}

enum Cell {
    Int(u64),
    Real(f64),
    Flag(bool),
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => v.to_string(),
            Cell::Flag(v) => v.to_string(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => (*v).into(),
            Cell::Real(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            Cell::Flag(v) => (*v).into(),
        }
    }
}

fn variance_rule(model: &NullModel) -> VarianceRule {
    match *model {
        NullModel::GaussianIid { sigma, .. } => VarianceRule::Constant { variance: sigma * sigma },
        NullModel::GaussianPredictableVar { rule, .. } => rule,
        _ => VarianceRule::UNIT,
    }
}

fn rows(cfg: &SimConfig, path: &SamplePath) -> Result<Vec<Vec<Cell>>, Failure> {
    let xs = path.xs();
    let alpha = cfg.alpha;
    let mut out = Vec::with_capacity(xs.len());
    let e_instrument = match cfg.instrument {
        Instrument::GaussianNm => {
            Some(EInstrument::GaussianNm { mean: cfg.center, lambda: 1.0, rule: variance_rule(&cfg.model) })
        }
        Instrument::ExpNsm => Some(EInstrument::ExponentialNsm { center: cfg.center }),
        Instrument::MirroredNm => {
            Some(EInstrument::OddFactor { shape: FactorShape::mirrored_exponential(), center: cfg.center })
        }
        Instrument::Arctan => Some(EInstrument::OddFactor { shape: FactorShape::arctan(), center: cfg.center }),
        _ => None,
    };
    if let Some(inst) = e_instrument {
        let mut e = inst.start()?;
        let mut test = SequentialTest::new(alpha, TestSource::FromE)?;
        let mut p: f64 = 1.0;
        for (t, &x) in xs.iter().enumerate() {
            e.observe(x);
            p = p.min((-e.log_value()).exp());
            let rejected = test.step_log_e(e.log_value());
            out.push(vec![Cell::Int(t as u64 + 1), Cell::Real(x), Cell::Real(e.value()), Cell::Real(p), Cell::Flag(rejected)]);
        }
        return Ok(out);
    }
    match cfg.instrument {
        Instrument::Signwalk => {
            let mut s = SignWalkState::new(alpha)?;
            for (t, &x) in xs.iter().enumerate() {
                let rejected = s.step(x - cfg.center);
                out.push(vec![Cell::Int(t as u64 + 1), Cell::Real(x), Cell::Int(s.value), Cell::Flag(rejected)]);
            }
        }
        Instrument::DyadicP => {
            let mut s = DyadicPValueState::new();
            let mut test = SequentialTest::new(alpha, TestSource::FromP)?;
            for (t, &x) in xs.iter().enumerate() {
                let p = s.step(x - cfg.center);
                out.push(vec![Cell::Int(t as u64 + 1), Cell::Real(x), Cell::Real(p), Cell::Flag(test.step_p(p))]);
            }
        }
        Instrument::MixtureCs => {
            for iv in mixture_cs_intervals(path, variance_rule(&cfg.model), alpha, 1.0)? {
                out.push(vec![
                    Cell::Int(iv.t as u64),
                    Cell::Real(iv.center),
                    Cell::Real(iv.radius),
                    Cell::Real(iv.lower),
                    Cell::Real(iv.upper),
                ]);
            }
        }
        _ => unreachable!("e-instruments handled above"),
    }
    Ok(out)
}

fn simulate(a: SimulateArgs) -> Result<u8, Failure> {
    if a.schema {
        return print_schema(simulate_schema());
    }
    let cfg = resolve(a)?;
    let path = avseq::model::sample_path(&cfg.model, cfg.horizon, cfg.seed)?;
    let data = rows(&cfg, &path)?;
    let header = columns(cfg.instrument);
    let text = match cfg.format {
        RowFormat::Csv => {
            let mut w = csv::Writer::from_writer(vec![]);
            let io = |e: csv::Error| Failure::config(e.to_string());
            w.write_record(header).map_err(io)?;
            for row in &data {
                w.write_record(row.iter().map(Cell::text)).map_err(io)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Failure::config(e.to_string()))?).expect("utf8")
        }
        RowFormat::Jsonl => data
            .iter()
            .map(|row| {
                let obj: serde_json::Map<_, _> =
                    header.iter().zip(row).map(|(k, c)| (k.to_string(), c.json())).collect();
                serde_json::Value::Object(obj).to_string() + "\n"
            })
            .collect(),
    };
    emit(cfg.output.as_ref(), &text)?;
    Ok(0)
}

fn simulate_schema() -> serde_json::Value {
    serde_json::json!({
        "command": "simulate",
        "formats": ["csv (header row, '.' decimal)", "jsonl (one object per time)"],
        "columns": {
            "signwalk": {"t": "int, 1-based time", "x": "observation", "value": "integer walk M_t absorbed at 0 and 1/alpha", "rejected": "bool, absorbing"},
            "gaussian-nm | exp-nsm | mirrored-nm | arctan": {"t": "int", "x": "observation", "e": "e-process value", "p": "1 ∧ inf 1/e", "rejected": "bool, e >= 1/alpha so far"},
            "mixture-cs": {"t": "int", "center": "running mean", "radius": "half-width at t", "lower": "running-intersection lower end", "upper": "running-intersection upper end"},
            "dyadic-p": {"t": "int", "x": "observation", "p": "dyadic max-martingale p-value", "rejected": "bool, p <= alpha so far"}
        },
        "config_file_fields": ["model", "instrument", "alpha", "horizon", "center", "seed", "format", "output"]
    })
}

// ------------------------------------------------------------------ verify

fn verify(a: VerifyArgs) -> Result<u8, Failure> {
    if a.schema {
        return print_schema(verify_schema());
    }
    let suite = a.suite.ok_or_else(|| Failure::config("missing suite"))?;
    if a.threads == Some(0) {
        return Err(Failure::config("--threads must be at least 1"));
    }
    let cfg = RunConfig {
        seed: a.seed,
        threads: a.threads,
        scale: if a.quick { Scale::Quick } else { Scale::Full },
        wall_time: a.wall_time,
    };
    let report = harness::run_suite(suite, &cfg)?;
    let text = match a.format {
        ReportFormat::Json => report.to_json()? + "\n",
        ReportFormat::Csv => report.to_csv()?,
    };
    emit(a.output.as_ref(), &text)?;
    eprint!("{}", report.summary());
    Ok(if report.passed { 0 } else { 1 })
}

fn verify_schema() -> serde_json::Value {
    serde_json::json!({
        "command": "verify",
        "json": {
            "suite": "string",
            "seed": "u64",
            "scale": "full | quick",
            "passed": "bool, true iff every check's verdict is PASS",
            "checks": [{
                "name": "string", "model": "string", "n": "u64", "estimate": "f64", "std_error": "f64",
                "lower": "f64 | null", "upper": "f64 | null", "holds": "bool, lower <= estimate <= upper",
                "expected_to_hold": "bool, false for controls", "verdict": "PASS | FAIL",
                "witness": "null | {model, seed, path, time, detail}", "note": "string"
            }],
            "diagnostics": "map string -> f64",
            "wall_time_s": "f64, present only with --wall-time"
        },
        "csv_columns": harness::CSV_COLUMNS,
    })
}

// -------------------------------------------------------------------- tree

fn tree_cmd(a: TreeArgs) -> Result<u8, Failure> {
    if a.schema {
        return print_schema(tree_schema());
    }
    let file = a.file.as_ref().ok_or_else(|| Failure::config("missing tree file"))?;
    let text = fs::read_to_string(file).map_err(|e| Failure::config(format!("cannot read {}: {e}", file.display())))?;
    let tf = tree::parse_tree(&text)?;
    let (name, payload) = match &a.column {
        Some(c) => (c.as_str(), tf.column(c).ok_or_else(|| Failure::config(format!("no column `{c}`")))?),
        None => tf.first_payload().ok_or_else(|| Failure::config("the tree has no payload column"))?,
    };
    let mut cols: Vec<(&str, &Payload)> = tf.columns.iter().map(|(n, p)| (n.as_str(), p)).collect();
    let t = &tf.tree;
    let op = a.op.ok_or_else(|| Failure::config("missing tree operation"))?;
    let out = match op {
        TreeOp::Snell => {
            let s = tree::snell_doob(t, payload)?;
            let extra = [("L", &s.envelope), ("M", &s.martingale), ("A", &s.compensator)];
            cols.extend(extra);
            eprintln!("snell root {}", s.root_value());
            tree::write_tree(t, Some(&tf.ids), &cols)
        }
        TreeOp::Implied => {
            let alt = tree::implied_alternative(t, payload).map_err(|e| Failure::check(format!("column `{name}`: {e}")))?;
            tree::write_tree(&alt, Some(&tf.ids), &cols)
        }
        TreeOp::Admissibilize => {
            let adm = match a.kind {
                PayloadKind::E => {
                    let report = tree::brute_force_safety(t, payload, tree::EnumerationMode::Auto)?;
                    if !report.is_safe() {
                        println!("unsafe: snell root {}", report.snell_root);
                        return Err(Failure::check(format!(
                            "column `{name}` is not safe: max over stopping times of E[e_tau] is {}",
                            report.max_value
                        )));
                    }
                    tree::admissibilize_e(t, payload)?
                }
                PayloadKind::P => tree::admissibilize_p(t, payload).map_err(|e| Failure::check(e.to_string()))?,
            };
            cols.push(("admissible", &adm));
            let text = tree::write_tree(t, Some(&tf.ids), &cols);
            emit(a.output.as_ref(), &text)?;
            return Ok(0);
        }
    };
    emit(a.output.as_ref(), &out)?;
    Ok(0)
}

fn tree_schema() -> serde_json::Value {
    serde_json::json!({
        "command": "tree",
        "format": "whitespace separated; header `id parent prob x <columns>`; root parent `-`; exact rationals (a/b, integers, decimals); `#` starts a comment",
        "added_columns": {
            "snell": ["L (Snell envelope)", "M (martingale part)", "A (nondecreasing compensator), L = M - A"],
            "implied": "no new column; `prob` replaced by the implied alternative's conditional probabilities",
            "admissibilize": ["admissible"]
        },
        "exit_codes": {"0": "ok", "1": "payload unsafe / not a martingale / invalid p-value", "2": "malformed file or arguments"}
    })
}
