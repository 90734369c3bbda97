//! Text file formats. Floats are written with `{}`, the shortest decimal that
//! parses back to the same `f64`, so every file round-trips exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fl_ntk_core::dataset::{ClientPartition, Dataset};
use fl_ntk_core::kernel::{GramKind, GramMatrix};
use fl_ntk_core::model::ModelParams;
use fl_ntk_core::numerics::DenseMatrix;
use fl_ntk_core::theory::{BoundContext, BoundReport};
use fl_ntk_core::trainer::{LocalRecord, RoundRecord};

use crate::error::{CliError, Result};

pub const TRACE_COLUMNS: &str = "round,residual_sq,loss,max_global_move,total_move_fro";
pub const LOCAL_COLUMNS: &str = "round,client,local_step,local_residual,local_deviation,max_local_move,max_round_move";
pub const BOUND_COLUMNS: &str = "bound_name,round,client,local_step,theoretical,measured,holds,margin";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn join<T: std::fmt::Display>(values: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
    out
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

struct Parser<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self { path, lines: lines(text).collect(), pos: 0 }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> CliError {
        CliError::format(self.path, line, message)
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = self.lines.last().map_or(0, |l| l.0);
        let item = self.lines.get(self.pos).copied().ok_or_else(|| self.err(last + 1, format!("missing {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    /// Parses `# fl-ntk <kind> v1, key=value, ...`.
    fn header(&mut self, kind: &str, keys: &[&str]) -> Result<(usize, BTreeMap<&'a str, &'a str>)> {
        let (no, line) = self.next_line("header")?;
        let prefix = format!("# fl-ntk {kind} v1");
        let rest = line
            .strip_prefix(prefix.as_str())
            .ok_or_else(|| self.err(no, format!("expected header starting with `{prefix}`")))?;
        let mut fields = BTreeMap::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) =
                part.split_once('=').ok_or_else(|| self.err(no, format!("malformed header field `{part}`")))?;
            fields.insert(k.trim(), v.trim());
        }
        for key in keys {
            if !fields.contains_key(key) {
                return Err(self.err(no, format!("header is missing `{key}`")));
            }
        }
        Ok((no, fields))
    }

    fn columns(&mut self, expected: &str) -> Result<()> {
        let (no, line) = self.next_line("column header")?;
        if line != expected {
            return Err(self.err(no, format!("expected columns `{expected}`")));
        }
        Ok(())
    }

    fn rest(&mut self) -> Vec<(usize, &'a str)> {
        let out = self.lines[self.pos..].to_vec();
        self.pos = self.lines.len();
        out
    }

    fn finish(&self) -> Result<()> {
        match self.lines.get(self.pos) {
            Some(&(no, _)) => Err(self.err(no, "unexpected trailing line")),
            None => Ok(()),
        }
    }
}

fn parse_value<T: std::str::FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| CliError::format(path, line, format!("invalid {what} `{field}`")))
}

fn parse_floats(path: &Path, line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = text.split(',').map(|f| parse_value(path, line, f, "number")).collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(CliError::format(path, line, format!("expected {expected} values, found {}", values.len())));
    }
    Ok(values)
}

fn core_at(path: &Path, line: usize, e: fl_ntk_core::Error) -> CliError {
    CliError::format(path, line, e.to_string())
}

// Dataset

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = format!("# fl-ntk dataset v1, n={}, d={}\n", ds.len(), ds.dim());
    for i in 0..ds.len() {
        writeln!(out, "{},{}", join(ds.input(i)), ds.labels()[i]).unwrap();
    }
    out
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut p = Parser::new(path, text);
    let (no, h) = p.header("dataset", &["n", "d"])?;
    let n: usize = parse_value(path, no, h["n"], "n")?;
    let d: usize = parse_value(path, no, h["d"], "d")?;
    let rows = p.rest();
    if rows.len() != n {
        return Err(CliError::format(path, no, format!("header says n={n}, found {} rows", rows.len())));
    }
    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for &(line, text) in &rows {
        let values = parse_floats(path, line, text, d + 1)?;
        inputs.extend_from_slice(&values[..d]);
        labels.push(values[d]);
    }
    let matrix = DenseMatrix::new(n, d, inputs).map_err(|e| core_at(path, no, e))?;
    Dataset::new(matrix, labels).map_err(|e| core_at(path, no, e))
}

// Partition

pub fn partition_to_string(part: &ClientPartition) -> String {
    let mut out = format!("# fl-ntk partition v1, n={}, N={}\n", part.num_points(), part.num_clients());
    for (c, set) in part.clients().iter().enumerate() {
        for i in set {
            writeln!(out, "{c},{i}").unwrap();
        }
    }
    out
}

pub fn parse_partition(text: &str, path: &Path) -> Result<ClientPartition> {
    let mut p = Parser::new(path, text);
    let (no, h) = p.header("partition", &["n", "N"])?;
    let n: usize = parse_value(path, no, h["n"], "n")?;
    let clients: usize = parse_value(path, no, h["N"], "N")?;
    let mut sets = vec![Vec::new(); clients];
    for (line, text) in p.rest() {
        let (c, i) =
            text.split_once(',').ok_or_else(|| CliError::format(path, line, "expected `client_index,point_index`"))?;
        let c: usize = parse_value(path, line, c, "client index")?;
        let i: usize = parse_value(path, line, i, "point index")?;
        let set = sets
            .get_mut(c)
            .ok_or_else(|| CliError::format(path, line, format!("client {c} out of range for N={clients}")))?;
        set.push(i);
    }
    ClientPartition::new(sets, n).map_err(|e| core_at(path, no, e))
}

// Model parameters

pub fn params_to_string(params: &ModelParams) -> String {
    params_with_weights(params, params.weights())
}

/// Parameter file with the signs and scale of `params` and the given weights.
pub fn params_with_weights(params: &ModelParams, weights: &DenseMatrix) -> String {
    let mut out = format!(
        "# fl-ntk params v1, d={}, m={}, sigma={}\n{}\n",
        weights.rows(),
        weights.cols(),
        params.sigma(),
        join(params.signs())
    );
    for k in 0..weights.rows() {
        writeln!(out, "{}", join(weights.row(k))).unwrap();
    }
    out
}

pub fn parse_params(text: &str, path: &Path) -> Result<ModelParams> {
    let mut p = Parser::new(path, text);
    let (no, h) = p.header("params", &["d", "m", "sigma"])?;
    let d: usize = parse_value(path, no, h["d"], "d")?;
    let m: usize = parse_value(path, no, h["m"], "m")?;
    let sigma: f64 = parse_value(path, no, h["sigma"], "sigma")?;
    let (line, signs) = p.next_line("signs row")?;
    let signs = parse_floats(path, line, signs, m)?;
    let mut weights = Vec::with_capacity(d * m);
    for _ in 0..d {
        let (line, row) = p.next_line("weight row")?;
        weights.extend(parse_floats(path, line, row, m)?);
    }
    p.finish()?;
    let matrix = DenseMatrix::new(d, m, weights).map_err(|e| core_at(path, no, e))?;
    ModelParams::new(matrix, signs, sigma).map_err(|e| core_at(path, no, e))
}

// Gram matrices

pub fn gram_to_string(gram: &GramMatrix) -> String {
    let n = gram.size();
    let mut out = format!("# fl-ntk gram v1, kind={}, n={n}\n", gram.kind.as_str());
    for i in 0..n {
        writeln!(out, "{}", join(gram.matrix.row(i))).unwrap();
    }
    out
}

pub fn parse_gram(text: &str, path: &Path) -> Result<GramMatrix> {
    let mut p = Parser::new(path, text);
    let (no, h) = p.header("gram", &["kind", "n"])?;
    let kind = GramKind::parse(h["kind"])
        .ok_or_else(|| CliError::format(path, no, format!("unknown kind `{}`", h["kind"])))?;
    let n: usize = parse_value(path, no, h["n"], "n")?;
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n {
        let (line, row) = p.next_line("gram row")?;
        data.extend(parse_floats(path, line, row, n)?);
    }
    p.finish()?;
    let matrix = DenseMatrix::new(n, n, data).map_err(|e| core_at(path, no, e))?;
    GramMatrix::new(matrix, kind).map_err(|e| core_at(path, no, e))
}

// Traces

pub fn trace_to_string(rounds: &[RoundRecord]) -> String {
    let mut out = format!("{TRACE_COLUMNS}\n");
    for r in rounds {
        writeln!(out, "{},{},{},{},{}", r.round, r.residual_sq, r.loss, r.max_global_move, r.total_move_fro).unwrap();
    }
    out
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<RoundRecord>> {
    let mut p = Parser::new(path, text);
    p.columns(TRACE_COLUMNS)?;
    p.rest()
        .into_iter()
        .map(|(line, row)| {
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != 5 {
                return Err(CliError::format(path, line, format!("expected 5 fields, found {}", f.len())));
            }
            Ok(RoundRecord {
                round: parse_value(path, line, f[0], "round")?,
                residual_sq: parse_value(path, line, f[1], "residual")?,
                loss: parse_value(path, line, f[2], "loss")?,
                max_global_move: parse_value(path, line, f[3], "movement")?,
                total_move_fro: parse_value(path, line, f[4], "movement")?,
            })
        })
        .collect()
}

pub fn local_to_string(records: &[LocalRecord]) -> String {
    let mut out = format!("{LOCAL_COLUMNS}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round, r.client, r.local_step, r.local_residual, r.local_deviation, r.max_local_move, r.max_round_move
        )
        .unwrap();
    }
    out
}

pub fn parse_local(text: &str, path: &Path) -> Result<Vec<LocalRecord>> {
    let mut p = Parser::new(path, text);
    p.columns(LOCAL_COLUMNS)?;
    p.rest()
        .into_iter()
        .map(|(line, row)| {
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != 7 {
                return Err(CliError::format(path, line, format!("expected 7 fields, found {}", f.len())));
            }
            Ok(LocalRecord {
                round: parse_value(path, line, f[0], "round")?,
                client: parse_value(path, line, f[1], "client")?,
                local_step: parse_value(path, line, f[2], "local step")?,
                local_residual: parse_value(path, line, f[3], "residual")?,
                local_deviation: parse_value(path, line, f[4], "deviation")?,
                max_local_move: parse_value(path, line, f[5], "movement")?,
                max_round_move: parse_value(path, line, f[6], "movement")?,
            })
        })
        .collect()
}

// Bound reports

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn bounds_to_string(reports: &[BoundReport]) -> String {
    let mut out = format!("{BOUND_COLUMNS}\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.name,
            opt(r.context.round),
            opt(r.context.client),
            opt(r.context.local_step),
            r.theoretical,
            r.measured,
            r.holds,
            r.margin
        )
        .unwrap();
    }
    out
}

/// Reads a bound report file. The leading constant is not stored, so it is
/// reconstructed as NaN.
pub fn parse_bounds(text: &str, path: &Path) -> Result<Vec<BoundReport>> {
    let mut p = Parser::new(path, text);
    p.columns(BOUND_COLUMNS)?;
    p.rest()
        .into_iter()
        .map(|(line, row)| {
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != 8 {
                return Err(CliError::format(path, line, format!("expected 8 fields, found {}", f.len())));
            }
            let ctx_field = |s: &str| -> Result<Option<usize>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_value(path, line, s, "context index").map(Some)
                }
            };
            Ok(BoundReport {
                name: f[0].to_string(),
                context: BoundContext {
                    round: ctx_field(f[1])?,
                    client: ctx_field(f[2])?,
                    local_step: ctx_field(f[3])?,
                },
                theoretical: parse_value(path, line, f[4], "theoretical value")?,
                measured: parse_value(path, line, f[5], "measured value")?,
                holds: parse_value(path, line, f[6], "holds flag")?,
                margin: parse_value(path, line, f[7], "margin")?,
                constant: f64::NAN,
            })
        })
        .collect()
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_text(path)?, path)
}

pub fn read_partition(path: &Path) -> Result<ClientPartition> {
    parse_partition(&read_text(path)?, path)
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    parse_params(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fl_ntk_core::dataset::{generate, partition_iid, DistributionSpec};
    use fl_ntk_core::model::init;
    use fl_ntk_core::numerics::{streams, RngStream};

    fn p() -> &'static Path {
        Path::new("test.csv")
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let ds = generate(&DistributionSpec::uniform_sphere(), 7, 3, &RngStream::new(4, streams::DATA)).unwrap();
        let text = dataset_to_string(&ds);
        assert!(text.starts_with("# fl-ntk dataset v1, n=7, d=3\n"));
        assert_eq!(parse_dataset(&text, p()).unwrap(), ds);
    }

    #[test]
    fn partition_and_params_round_trip() {
        let part = partition_iid(9, 4, &RngStream::new(1, streams::PARTITION)).unwrap();
        assert_eq!(parse_partition(&partition_to_string(&part), p()).unwrap(), part);
        let params = init(5, 3, 0.25, &RngStream::new(1, streams::INIT)).unwrap();
        assert_eq!(parse_params(&params_to_string(&params), p()).unwrap(), params);
    }

    #[test]
    fn bounds_keep_empty_context() {
        let r = BoundReport::new("global_movement", 1.5, 0.25, BoundContext::round(3), 8.0);
        let text = bounds_to_string(core::slice::from_ref(&r));
        assert!(text.contains("global_movement,3,,,1.5,0.25,true,1.25"));
        let back = &parse_bounds(&text, p()).unwrap()[0];
        assert_eq!((back.context, back.margin, back.holds), (r.context, r.margin, r.holds));
    }

    #[test]
    fn errors_name_the_line() {
        let text = "# fl-ntk dataset v1, n=2, d=2\n1,0,0.5\n0,1,abc\n";
        match parse_dataset(text, p()) {
            Err(CliError::Format { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_dataset("# fl-ntk params v1\n", p()), Err(CliError::Format { line: 1, .. })));
        let short = "# fl-ntk dataset v1, n=3, d=2\n1,0,0.5\n";
        assert!(matches!(parse_dataset(short, p()), Err(CliError::Format { .. })));
    }
}
