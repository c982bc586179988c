use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::time::Duration;

use anyhow::{bail, Context};
use lstree::oracle::{load_lexicon, ExternalConfig};
use lstree::report;
use lstree::{
    adversative_report, design_matrix, detect_interactions, nonlinearity_report, overfit_test, populate, read_corpus,
    solve_lstree, AnalyzedInstance, CachingOracle, DistanceMode, InstanceRecord, InteractionReport, Oracle,
    OracleSpec, ParseTree, Split, DEFAULT_MARKERS,
};

use crate::{Command, Common};

pub enum Outcome {
    Complete,
    /// Number of instances that were logged and skipped.
    Partial(usize),
}

/// JSON lines go to `--out` when given, otherwise to stdout. Human-readable
/// text goes to stdout when `--out` took the JSON, otherwise to stderr.
struct Sinks {
    json: Box<dyn Write>,
    text: Box<dyn Write>,
    json_on_stdout: bool,
}

impl Sinks {
    fn open(common: &Common) -> anyhow::Result<Self> {
        Ok(match &common.out {
            Some(path) => {
                let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
                Sinks { json: Box::new(BufWriter::new(f)), text: Box::new(io::stdout()), json_on_stdout: false }
            }
            None => Sinks { json: Box::new(BufWriter::new(io::stdout())), text: Box::new(io::stderr()), json_on_stdout: true },
        })
    }

    fn lines(&mut self, lines: impl IntoIterator<Item = String>) -> io::Result<()> {
        for l in lines {
            writeln!(self.json, "{l}")?;
        }
        Ok(())
    }
}

/// The tree, its words and the fitted quantities for one instance.
struct Scored {
    tree: ParseTree,
    tokens: Vec<String>,
    psi: Vec<f64>,
    attribution: lstree::AttributionResult,
    interactions: Option<InteractionReport>,
}

fn score(oracle: &mut dyn Oracle, rec: &InstanceRecord, with_interactions: bool) -> lstree::Result<Scored> {
    let tree = rec.parse_tree()?;
    let x = design_matrix(&tree);
    let table = populate(oracle, &tree)?;
    let attribution = solve_lstree(&table, &x, None)?;
    let interactions =
        if with_interactions { Some(detect_interactions(&table, &tree, &x, DistanceMode::Both)?) } else { None };
    Ok(Scored { tokens: tree.surfaces(), psi: attribution.psi.clone(), tree, attribution, interactions })
}

pub fn execute(command: Command) -> anyhow::Result<Outcome> {
    let common = match &command {
        Command::Values { common } => common,
        Command::Interactions { common, .. } => common,
        Command::Analyze { common, .. } => common,
        Command::Diagnose { common, .. } => common,
    };
    let file = File::open(&common.corpus).with_context(|| format!("cannot open corpus {}", common.corpus.display()))?;
    let records = read_corpus(BufReader::new(file)).with_context(|| format!("in {}", common.corpus.display()))?;

    if let Command::Diagnose { .. } = command {
        if let Some(r) = records.iter().find(|r| r.split.is_none()) {
            bail!("instance {:?} has no split tag; diagnose needs train/test labels on every record", r.id);
        }
    }
    let coefficients = match &command {
        Command::Analyze { coefficients, .. } => Some(reference_coefficients(coefficients.as_deref(), &common.model)?),
        _ => None,
    };

    let mut sinks = Sinks::open(common)?;
    if records.is_empty() {
        log::warn!("corpus {} has no instances", common.corpus.display());
        sinks.json.flush()?;
        return Ok(Outcome::Complete);
    }

    let config = ExternalConfig {
        mask_mode: common.mask_mode,
        mask_token: common.mask_token.clone(),
        class_index: common.class_index,
        timeout: Duration::from_secs(common.timeout),
        ..ExternalConfig::default()
    };
    let backend = common.model.build(&config).context("cannot start model")?;
    let mut oracle = CachingOracle::new(backend);

    let with_interactions = !matches!(command, Command::Values { .. });
    let mut failed = 0usize;
    let mut scored = Vec::with_capacity(records.len());
    for rec in &records {
        match score(&mut oracle, rec, with_interactions) {
            Ok(s) => scored.push((rec, s)),
            Err(e) => {
                log::error!("instance {:?} skipped: {e}", rec.id);
                failed += 1;
            }
        }
    }
    log::info!("{} model queries for {} instances", oracle.backend_queries(), records.len());
    drop(oracle);

    match command {
        Command::Values { .. } => {
            for (rec, s) in &scored {
                sinks.lines([report::attribution_line(&rec.id, &s.tokens, &s.attribution)])?;
            }
        }
        Command::Interactions { distance, render, .. } => {
            let write_json = !render || !sinks.json_on_stdout;
            for (rec, s) in &mut scored {
                let r = s.interactions.as_mut().expect("computed above");
                r.mode = distance;
                if write_json {
                    sinks.lines(report::interaction_lines(&rec.id, r))?;
                }
                if render {
                    let out: &mut dyn Write = if sinks.json_on_stdout { &mut sinks.json } else { &mut sinks.text };
                    writeln!(out, "# {}", rec.id)?;
                    write!(out, "{}", report::render_tree(&s.tree, r))?;
                }
            }
        }
        Command::Analyze { top_k, markers, .. } => {
            let instances: Vec<AnalyzedInstance> = scored.into_iter().map(|(rec, s)| analyzed(rec, s)).collect();
            let markers: Vec<String> = markers.unwrap_or_else(|| DEFAULT_MARKERS.iter().map(|m| m.to_string()).collect());
            let markers: Vec<&str> = markers.iter().map(|m| m.trim()).filter(|m| !m.is_empty()).collect();
            if markers.is_empty() {
                bail!("--markers must name at least one phrase");
            }
            let nl = nonlinearity_report(&instances, coefficients.as_ref().expect("resolved above"), top_k);
            let adv = adversative_report(&instances, &markers);
            sinks.lines(report::nonlinearity_lines(&nl))?;
            sinks.lines(report::adversative_lines(&adv))?;
            write!(sinks.text, "{}", report::analysis_table(&nl, &adv))?;
        }
        Command::Diagnose { iterations, .. } => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (rec, s) in scored {
                let r = s.interactions.expect("computed above");
                match rec.split {
                    Some(Split::Train) => train.push(r),
                    Some(Split::Test) => test.push(r),
                    None => unreachable!("checked before scoring"),
                }
            }
            let d = overfit_test(&train, &test, iterations, common.seed).context("permutation test")?;
            sinks.lines([report::overfit_line(&d)])?;
            write!(sinks.text, "{}", report::overfit_table(&d))?;
        }
    }
    sinks.json.flush()?;
    sinks.text.flush()?;
    Ok(if failed == 0 { Outcome::Complete } else { Outcome::Partial(failed) })
}

fn analyzed(rec: &InstanceRecord, s: Scored) -> AnalyzedInstance {
    AnalyzedInstance {
        id: rec.id.clone(),
        tokens: s.tokens,
        psi: s.psi,
        interactions: s.interactions.expect("computed above"),
        split: rec.split,
    }
}

fn reference_coefficients(path: Option<&std::path::Path>, model: &OracleSpec) -> anyhow::Result<HashMap<String, f64>> {
    let path = match (path, model) {
        (Some(p), _) => p,
        (None, OracleSpec::BuiltinLinear { lexicon }) => lexicon.as_path(),
        (None, _) => bail!("--coefficients is required unless --model is builtin-linear"),
    };
    load_lexicon(path).with_context(|| format!("cannot load coefficients from {}", path.display()))
}
