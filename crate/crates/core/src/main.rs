use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use implcheck::abstraction::{
    check_abstraction_under_translation, check_constructive_abstraction, check_translation, AbstractionOptions, Alignment,
    VerificationReport, Verdict,
};
use implcheck::align_search::{search, SearchConfig};
use implcheck::audit::audit;
use implcheck::fixtures::{self, Fixture};
use implcheck::formats;
use implcheck::intervene::{interchange, Interventional};
use implcheck::model::{all_boolean_inputs, describe_assignment, Assignment, CausalModel};
use implcheck::translate::Translation;

#[derive(Parser)]
#[command(name = "implcheck", version, about = "Run causal models and check abstractions, translations and representation audits")]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true, env = "IMPLCHECK_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model on its defaults or on an input space.
    Run {
        #[arg(long)]
        model: String,
        #[arg(long)]
        inputs: Option<InputSpace>,
        #[command(flatten)]
        out: Output,
    },
    /// Run a model under an interventional, or evaluate an interchange spec.
    Intervene {
        #[arg(long)]
        model: String,
        #[arg(long, required_unless_present = "interchange", conflicts_with = "interchange")]
        interventional: Option<PathBuf>,
        #[arg(long)]
        interchange: Option<PathBuf>,
        #[arg(long)]
        inputs: Option<InputSpace>,
        #[command(flatten)]
        out: Output,
    },
    /// Check that an alignment makes HIGH a constructive abstraction of LOW.
    VerifyAbstraction {
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        alignment: String,
        #[command(flatten)]
        checks: Checks,
        #[command(flatten)]
        out: Output,
    },
    /// Check that translating LOW yields HIGH under every hard intervention.
    VerifyTranslation {
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        translation: String,
        #[arg(long, default_value = "all-boolean")]
        inputs: InputSpace,
        #[command(flatten)]
        out: Output,
    },
    /// Check a constructive abstraction of a translation of LOW.
    VerifyAut {
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        translation: String,
        #[arg(long)]
        alignment: String,
        #[command(flatten)]
        checks: Checks,
        #[command(flatten)]
        out: Output,
    },
    /// Audit one vehicle for information, use and misrepresentation.
    Audit {
        #[arg(long)]
        request: PathBuf,
        #[arg(long, default_value = "all-boolean")]
        inputs: InputSpace,
        #[command(flatten)]
        out: Output,
    },
    /// Search for a rotation of one layer that aligns a network with HIGH.
    SearchAlignment {
        #[arg(long, required_unless_present = "weights", conflicts_with = "weights")]
        model: Option<String>,
        /// Plain-text matrices W1, W2, W3 of a two-hidden-layer ReLU network.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        high: String,
        #[arg(long)]
        alignment: String,
        /// Rotated layer; defaults to the low variables of the cells of
        /// HIGH's intermediate variables.
        #[arg(long, value_delimiter = ',')]
        layer: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        budget: usize,
        #[arg(long)]
        no_certify: bool,
        #[arg(long, default_value = "all-boolean")]
        inputs: InputSpace,
        /// Where to write the found rotation as a linear translation.
        #[arg(long)]
        translation_out: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Built-in models, alignments and translations.
    Fixtures {
        #[command(subcommand)]
        action: FixturesCommand,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Write fixtures as files named `<fixture>.toml` (all by default).
    Export {
        #[arg(long)]
        dir: PathBuf,
        names: Vec<String>,
    },
}

#[derive(Args)]
struct Pair {
    /// Model file or `fixture:<name>`.
    #[arg(long)]
    low: String,
    #[arg(long)]
    high: String,
}

#[derive(Args)]
struct Checks {
    #[arg(long, default_value = "all-boolean")]
    inputs: InputSpace,
    /// Recursive interchange depth.
    #[arg(long, default_value_t = implcheck::intervene::MAX_INTERCHANGE_DEPTH)]
    depth: usize,
    /// High-level interchange targets (default: aligned intermediates).
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
}

#[derive(Args)]
struct Output {
    /// Write a JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Debug)]
enum InputSpace {
    AllBoolean,
    File(PathBuf),
}

impl std::str::FromStr for InputSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all-boolean" => Ok(InputSpace::AllBoolean),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(InputSpace::File(PathBuf::from(p))),
                _ => Err(format!("expected `all-boolean` or `file:<path>`, got `{s}`")),
            },
        }
    }
}

/// A usage, parse or evaluation error; exits with status 2.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn fail<T>(message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(message.into()))
}

fn sha256(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

/// Reads referenced files and fixtures, remembering a hash of each.
#[derive(Default)]
struct Loader {
    sources: BTreeMap<String, String>,
}

impl Loader {
    fn text(&mut self, path: &Path) -> Result<String, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
        self.sources.insert(path.display().to_string(), sha256(text.as_bytes()));
        Ok(text)
    }

    fn fixture(&mut self, reference: &str) -> Result<Option<Fixture>, Failure> {
        let Some(name) = reference.strip_prefix("fixture:") else {
            return Ok(None);
        };
        let fixture = fixtures::build(name)?;
        self.sources.insert(reference.to_string(), sha256(export(&fixture).as_bytes()));
        Ok(Some(fixture))
    }

    fn model(&mut self, reference: &str, base: &Path) -> Result<CausalModel, Failure> {
        match self.fixture(reference)? {
            Some(Fixture::Model(m)) => Ok(m),
            Some(_) => fail(format!("`{reference}` is not a model")),
            None => {
                let path = base.join(reference);
                let text = self.text(&path)?;
                formats::parse_model(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))
            }
        }
    }

    fn alignment(&mut self, reference: &str, base: &Path) -> Result<Alignment, Failure> {
        match self.fixture(reference)? {
            Some(Fixture::Alignment(a)) => Ok(a),
            Some(_) => fail(format!("`{reference}` is not an alignment")),
            None => {
                let path = base.join(reference);
                let text = self.text(&path)?;
                formats::parse_alignment(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))
            }
        }
    }

    fn translation(&mut self, reference: &str, low: &CausalModel) -> Result<Translation, Failure> {
        match self.fixture(reference)? {
            Some(Fixture::Translation(t)) => Ok(t),
            Some(_) => fail(format!("`{reference}` is not a translation")),
            None => {
                let path = PathBuf::from(reference);
                let text = self.text(&path)?;
                let file = formats::parse_translation(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
                Ok(file.resolve(low)?)
            }
        }
    }

    fn inputs(&mut self, space: &InputSpace, model: &CausalModel) -> Result<Vec<Assignment>, Failure> {
        match space {
            InputSpace::AllBoolean => Ok(all_boolean_inputs(model)),
            InputSpace::File(path) => {
                let text = self.text(path)?;
                formats::parse_inputs(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))
            }
        }
    }
}

fn export(fixture: &Fixture) -> String {
    match fixture {
        Fixture::Model(m) => formats::serialize_model(m),
        Fixture::Alignment(a) => formats::serialize_alignment(a),
        Fixture::Translation(t) => formats::serialize_translation(t),
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    sources: &'a BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<Verdict>,
    result: T,
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Failure(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn emit<T: Serialize>(out: &Output, loader: &Loader, command: &'static str, verdict: Option<Verdict>, result: T) -> Result<(), Failure> {
    if let Some(path) = &out.report {
        let report = Report {
            tool: "implcheck",
            version: env!("CARGO_PKG_VERSION"),
            command,
            sources: &loader.sources,
            verdict,
            result,
        };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_atomically(path, text.as_bytes())?;
    }
    Ok(())
}

fn summarize(report: &VerificationReport) {
    match report.verdict {
        Verdict::Pass => println!("PASS: {} checks", report.checked),
        Verdict::Fail => {
            println!("FAIL: {} failed check(s) out of {}", report.failed, report.checked);
            for w in report.witnesses.iter().take(3) {
                println!("  witness: {}; mismatched {:?}", w.description, w.mismatched);
            }
        }
    }
}

fn options(checks: &Checks) -> AbstractionOptions {
    AbstractionOptions {
        depth: checks.depth,
        targets: checks.targets.clone(),
        ..AbstractionOptions::default()
    }
}

#[derive(Serialize)]
struct RunRow {
    input: String,
    run: String,
}

fn run_rows(model: &CausalModel, inputs: Option<Vec<Assignment>>) -> Result<Vec<RunRow>, Failure> {
    let Some(inputs) = inputs else {
        let run = describe_assignment(&model.run()?);
        println!("{run}");
        return Ok(vec![RunRow { input: "defaults".into(), run }]);
    };
    let plan = model.plan()?;
    let mut rows = Vec::new();
    for x in &inputs {
        let run = describe_assignment(&plan.run(x, &Default::default())?);
        let input = describe_assignment(x);
        println!("{input} -> {run}");
        rows.push(RunRow { input, run });
    }
    Ok(rows)
}

fn default_layer(alignment: &Alignment, high: &CausalModel) -> Vec<String> {
    let edges: Vec<String> = high.input_variables().into_iter().chain(high.sink_variables()).collect();
    alignment
        .cells()
        .iter()
        .filter(|c| !edges.contains(&c.high))
        .flat_map(|c| c.low.iter().cloned())
        .collect()
}

fn execute(cli: Cli) -> Result<Verdict, Failure> {
    let here = Path::new("");
    let mut loader = Loader::default();
    match cli.command {
        Command::Run { model, inputs, out } => {
            let m = loader.model(&model, here)?;
            let inputs = inputs.map(|s| loader.inputs(&s, &m)).transpose()?;
            let rows = run_rows(&m, inputs)?;
            emit(&out, &loader, "run", None, rows)?;
            Ok(Verdict::Pass)
        }
        Command::Intervene {
            model,
            interventional,
            interchange: spec,
            inputs,
            out,
        } => {
            let m = loader.model(&model, here)?;
            if let Some(path) = spec {
                let text = loader.text(&path)?;
                let spec = formats::parse_interchange(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
                let run = describe_assignment(&interchange(&m, &spec)?);
                println!("{run}");
                emit(&out, &loader, "intervene", None, vec![RunRow { input: "interchange".into(), run }])?;
                return Ok(Verdict::Pass);
            }
            let path = interventional.expect("clap requires one of the two");
            let text = loader.text(&path)?;
            let i: Interventional = formats::parse_interventional(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
            let intervened = i.apply(&m)?;
            let inputs = inputs.map(|s| loader.inputs(&s, &intervened)).transpose()?;
            let rows = run_rows(&intervened, inputs)?;
            emit(&out, &loader, "intervene", None, rows)?;
            Ok(Verdict::Pass)
        }
        Command::VerifyAbstraction {
            pair,
            alignment,
            checks,
            out,
        } => {
            let low = loader.model(&pair.low, here)?;
            let high = loader.model(&pair.high, here)?;
            let a = loader.alignment(&alignment, here)?;
            let inputs = loader.inputs(&checks.inputs, &low)?;
            let report = check_constructive_abstraction(&low, &high, &a, &inputs, &options(&checks))?;
            summarize(&report);
            emit(&out, &loader, "verify-abstraction", Some(report.verdict), &report)?;
            Ok(report.verdict)
        }
        Command::VerifyTranslation {
            pair,
            translation,
            inputs,
            out,
        } => {
            let low = loader.model(&pair.low, here)?;
            let high = loader.model(&pair.high, here)?;
            let t = loader.translation(&translation, &low)?;
            let inputs = loader.inputs(&inputs, &low)?;
            let report = check_translation(&low, &high, &t, &inputs)?;
            summarize(&report);
            emit(&out, &loader, "verify-translation", Some(report.verdict), &report)?;
            Ok(report.verdict)
        }
        Command::VerifyAut {
            pair,
            translation,
            alignment,
            checks,
            out,
        } => {
            let low = loader.model(&pair.low, here)?;
            let high = loader.model(&pair.high, here)?;
            let t = loader.translation(&translation, &low)?;
            let a = loader.alignment(&alignment, here)?;
            let inputs = loader.inputs(&checks.inputs, &low)?;
            let report = check_abstraction_under_translation(&low, &high, &t, &a, &inputs, &options(&checks))?;
            summarize(&report);
            emit(&out, &loader, "verify-aut", Some(report.verdict), &report)?;
            Ok(report.verdict)
        }
        Command::Audit { request, inputs, out } => {
            let text = loader.text(&request)?;
            let req = formats::parse_audit_request(&text).map_err(|e| Failure(format!("{}: {e}", request.display())))?;
            let base = request.parent().unwrap_or(here);
            let low = loader.model(&req.low, base)?;
            let high = loader.model(&req.high, base)?;
            let a = loader.alignment(&req.alignment, base)?;
            let inputs = loader.inputs(&inputs, &low)?;
            let report = audit(&low, &high, &a, &req.vehicle, &req.property, &inputs)?;
            let verdicts = [report.information.verdict, report.use_.verdict, report.misrepresentation.verdict];
            for (name, v) in ["information", "use", "misrepresentation"].iter().zip(verdicts) {
                println!("{name}: {}", if v == Verdict::Pass { "PASS" } else { "FAIL" });
            }
            let verdict = if verdicts.iter().all(|v| *v == Verdict::Pass) { Verdict::Pass } else { Verdict::Fail };
            emit(&out, &loader, "audit", Some(verdict), &report)?;
            Ok(verdict)
        }
        Command::SearchAlignment {
            model,
            weights,
            high,
            alignment,
            layer,
            seed,
            budget,
            no_certify,
            inputs,
            translation_out,
            out,
        } => {
            let low = match (model, weights) {
                (Some(m), _) => loader.model(&m, here)?,
                (None, Some(path)) => {
                    let text = loader.text(&path)?;
                    let parsed = formats::parse_weights(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
                    let get = |name: &str| {
                        parsed
                            .iter()
                            .find(|(n, _)| n == name)
                            .map(|(_, m)| m.clone())
                            .ok_or_else(|| Failure(format!("{}: no matrix `{name}`", path.display())))
                    };
                    fixtures::network_from_weights(&get("W1")?, &get("W2")?, &get("W3")?)?
                }
                (None, None) => unreachable!("clap requires a model or weights"),
            };
            let high = loader.model(&high, here)?;
            let a = loader.alignment(&alignment, here)?;
            let inputs = loader.inputs(&inputs, &low)?;
            let layer = layer.unwrap_or_else(|| default_layer(&a, &high));
            let mut config = SearchConfig::new(layer.clone(), a);
            config.seed = seed;
            config.budget = budget;
            config.certify = !no_certify;
            let outcome = search(&low, &high, &config, &inputs)?;
            let found = outcome.score.iia == 1.0 && (outcome.certified || no_certify);
            println!(
                "IIA {:.6} after {} evaluations; {}",
                outcome.score.iia,
                outcome.evaluations,
                match (&outcome.report, outcome.certified) {
                    (Some(_), true) => "certified",
                    (Some(_), false) => "certification failed",
                    (None, _) => "not certified",
                }
            );
            if let Some(path) = &translation_out {
                let text = formats::serialize_linear(&layer, &layer, &outcome.rotation.exact_matrix());
                write_atomically(path, text.as_bytes())?;
            }
            let verdict = if found { Verdict::Pass } else { Verdict::Fail };
            emit(&out, &loader, "search-alignment", Some(verdict), &outcome)?;
            Ok(verdict)
        }
        Command::Fixtures {
            action: FixturesCommand::Export { dir, names },
        } => {
            let names: Vec<String> = if names.is_empty() {
                fixtures::CATALOG.iter().map(|s| s.to_string()).collect()
            } else {
                names
            };
            std::fs::create_dir_all(&dir).map_err(|e| Failure(format!("{}: {e}", dir.display())))?;
            for name in &names {
                let fixture = fixtures::build(name)?;
                let path = dir.join(format!("{name}.toml"));
                write_atomically(&path, export(&fixture).as_bytes())?;
                println!("{}", path.display());
            }
            Ok(Verdict::Pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
