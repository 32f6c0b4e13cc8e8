use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use ddlab::ingest::{read_csv, read_table, Table};
use ddlab::metrics;
use ddlab::ood_scores::{applicable_methods, fit_id_stats, score_method, Method, ScoreParams};

use crate::{emit, json_text, usage, CliError, CliResult};

pub const SCORES_SCHEMA: &str = "ddlab-scores v1";

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Labelled ID training table used to fit the shared statistics.
    #[arg(long)]
    pub train: PathBuf,
    /// Table to score.
    #[arg(long)]
    pub eval: PathBuf,
    /// Comma-separated method names, or `all` for every applicable method.
    #[arg(long, default_value = "all")]
    pub method: String,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Per-sample pruning percentile for ASH-P.
    #[arg(long, default_value_t = 90.0)]
    pub ash_percentile: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AucArgs {
    /// Scores of in-distribution samples.
    #[arg(long)]
    pub id: PathBuf,
    /// Scores of OOD samples.
    #[arg(long)]
    pub ood: PathBuf,
    /// Score column to use when a file has several.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Nc1Args {
    /// Labelled feature table.
    #[arg(long)]
    pub table: PathBuf,
    /// Table of the overparameterized model; adds the under/over ratio.
    #[arg(long)]
    pub over: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Number of classes C for the marker (default: from the table).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Loads `.csv` files as CSV tables and anything else as DDFT.
pub fn load_table(path: &Path) -> CliResult<Table> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        Ok(Table {
            outputs: read_csv(path)?,
            head: None,
        })
    } else {
        Ok(read_table(path)?)
    }
}

fn parse_methods(spec: &str) -> CliResult<Option<Vec<Method>>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    let methods = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Method>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    if methods.is_empty() {
        return usage("--method lists no methods");
    }
    Ok(Some(methods))
}

pub(crate) fn score(args: &ScoreArgs) -> CliResult<()> {
    let requested = parse_methods(&args.method)?;
    if !(args.temperature.is_finite() && args.temperature > 0.0) {
        return usage("--temperature must be positive");
    }
    if !(0.0..=100.0).contains(&args.ash_percentile) {
        return usage("--ash-percentile must be in [0, 100]");
    }
    let train = load_table(&args.train)?;
    let eval = load_table(&args.eval)?;
    let head = train.head.as_ref().or(eval.head.as_ref());
    if let Some(h) = head {
        h.check_against(&eval.outputs)?;
    }
    let stats = if train.outputs.labels().is_some() {
        Some(fit_id_stats(&train.outputs, head)?)
    } else {
        None
    };
    let methods = match requested {
        Some(m) => m,
        None => applicable_methods(eval.outputs.logits().is_some(), head.is_some(), stats.is_some()),
    };
    if methods.is_empty() {
        return Err(CliError::Data("no scoring method applies to these tables".into()));
    }
    let params = ScoreParams {
        temperature: args.temperature,
        ash_percentile: args.ash_percentile,
    };
    let columns = methods
        .iter()
        .map(|&m| score_method(m, &eval.outputs, head, stats.as_ref(), &params))
        .collect::<Result<Vec<_>, _>>()?;

    let mut text = String::new();
    let names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
    writeln!(text, "# {SCORES_SCHEMA}").unwrap();
    writeln!(text, "row,{}", names.join(",")).unwrap();
    for i in 0..eval.outputs.len() {
        text.push_str(&i.to_string());
        for c in &columns {
            write!(text, ",{}", c.scores[i]).unwrap();
        }
        text.push('\n');
    }
    emit(args.out.as_deref(), &text)
}

/// Reads one numeric column from a score CSV (`#` lines are comments).
pub fn read_scores(path: &Path, column: Option<&str>) -> CliResult<Vec<f64>> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let idx = match column {
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: no column '{name}'", path.display())))?,
        None => {
            let candidates: Vec<usize> = (0..header.len()).filter(|&i| &header[i] != "row").collect();
            match candidates.as_slice() {
                [i] => *i,
                _ => {
                    let names: Vec<&str> = header.iter().collect();
                    return usage(format!(
                        "{} has several score columns ({}); pick one with --column",
                        path.display(),
                        names.join(", ")
                    ));
                }
            }
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = rec
            .get(idx)
            .ok_or_else(|| bad(format!("line {line} has no field {idx}")))?;
        let v: f64 = field
            .parse()
            .map_err(|_| bad(format!("line {line}: '{field}' is not a number")))?;
        out.push(v);
    }
    Ok(out)
}

pub(crate) fn auc(args: &AucArgs) -> CliResult<()> {
    let id = read_scores(&args.id, args.column.as_deref())?;
    let ood = read_scores(&args.ood, args.column.as_deref())?;
    let r = metrics::auc(&id, &ood)?;
    #[derive(Serialize)]
    struct Report {
        auc: f64,
        n_id: usize,
        n_ood: usize,
    }
    emit(
        args.out.as_deref(),
        &json_text(&Report {
            auc: r.auc,
            n_id: r.n_id,
            n_ood: r.n_ood,
        }),
    )
}

#[derive(Debug, Serialize)]
struct Nc1Json {
    nc1: f64,
    per_class_counts: Vec<usize>,
}

fn nc1_of(path: &Path) -> CliResult<Nc1Json> {
    let t = load_table(path)?;
    let labels = t
        .outputs
        .labels()
        .ok_or_else(|| CliError::Data(format!("{}: NC1 needs a labels block", path.display())))?;
    let r = metrics::nc1(t.outputs.features(), labels)?;
    Ok(Nc1Json {
        nc1: r.nc1,
        per_class_counts: r.per_class_counts,
    })
}

pub(crate) fn nc1(args: &Nc1Args) -> CliResult<()> {
    let under = nc1_of(&args.table)?;
    let text = match &args.over {
        None => json_text(&under),
        Some(p) => {
            let over = nc1_of(p)?;
            let ratio = metrics::nc1_ratio(under.nc1, over.nc1)?;
            #[derive(Serialize)]
            struct Pair {
                under: Nc1Json,
                over: Nc1Json,
                ratio: f64,
            }
            json_text(&Pair { under, over, ratio })
        }
    };
    emit(args.out.as_deref(), &text)
}

pub(crate) fn spectrum(args: &SpectrumArgs) -> CliResult<()> {
    let t = load_table(&args.table)?;
    let classes = match args
        .classes
        .or(t.outputs.num_classes())
        .or(t.head.as_ref().map(|h| h.num_classes()))
    {
        Some(c) => c,
        None => return usage("the table has no labels or logits; pass --classes"),
    };
    let r = metrics::explained_variance_spectrum(t.outputs.features(), classes)?;
    #[derive(Serialize)]
    struct Report {
        eigenvalues: Vec<f64>,
        explained_fraction: Vec<f64>,
        marker_index: usize,
    }
    emit(
        args.out.as_deref(),
        &json_text(&Report {
            eigenvalues: r.eigenvalues.iter().copied().collect(),
            explained_fraction: r.explained_fraction.iter().copied().collect(),
            marker_index: r.marker_index,
        }),
    )
}
