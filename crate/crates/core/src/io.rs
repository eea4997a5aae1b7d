//! File formats: trajectory CSV/binary, fitted Q-function CSVs, spec files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::fqi::{FqiResult, LinearQ, StageQ, TimestepDiagnostics};
use crate::mdp::{MdpSpec, TrajectoryBatch, TrajectoryData};
use crate::regression::SupportSet;
use crate::{Error, Result};

pub const BINARY_MAGIC: [u8; 4] = *b"RFQI";
pub const BINARY_VERSION: u32 = 1;
pub const BINARY_HEADER_LEN: usize = 32;
pub const INTERCEPT_LABEL: &str = "intercept";

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn malformed(row: usize, message: impl Into<String>) -> Error {
    Error::MalformedInput {
        row,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, col: usize, row: usize) -> Result<T> {
    let raw = record
        .get(col)
        .ok_or_else(|| malformed(row, format!("missing column {col}")))?;
    raw.trim()
        .parse()
        .map_err(|_| malformed(row, format!("cannot parse `{raw}` in column {col}")))
}

pub fn trajectory_csv_header(d: usize) -> Vec<String> {
    let mut header = vec!["trajectory_id".to_string(), "t".to_string()];
    header.extend((0..d).map(|j| format!("s_{j}")));
    header.push("action".into());
    header.push("reward".into());
    header.extend((0..d).map(|j| format!("s'_{j}")));
    header
}

/// One row per transition, ordered by trajectory then stage.
pub fn write_trajectories_csv<W: Write>(batch: &TrajectoryBatch, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_csv_header(batch.d()))?;
    let mut row: Vec<String> = Vec::with_capacity(2 * batch.d() + 4);
    for i in 0..batch.len() {
        for (t, tr) in batch.trajectory(i).enumerate() {
            row.clear();
            row.push(i.to_string());
            row.push(t.to_string());
            row.extend(tr.state.iter().map(f64::to_string));
            row.push(tr.action.to_string());
            row.push(tr.reward.to_string());
            row.extend(tr.next_state.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads the CSV form back. The action count is taken from `num_actions`
/// when given, otherwise inferred as `max(action) + 1`. Seed and spec
/// fingerprint are not part of the format and come back as `0` and `""`.
pub fn read_trajectories_csv<R: Read>(input: R, num_actions: Option<usize>) -> Result<TrajectoryBatch> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let width = header.len();
    if width < 6 || (width - 4) % 2 != 0 {
        return Err(malformed(0, format!("unexpected header width {width}")));
    }
    let d = (width - 4) / 2;
    let expected = trajectory_csv_header(d);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(malformed(0, "header does not match the trajectory schema"));
    }

    let mut trajectories: Vec<TrajectoryData> = Vec::new();
    let mut max_action = 0usize;
    for (k, rec) in r.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let id: usize = parse_field(&rec, 0, row)?;
        let t: usize = parse_field(&rec, 1, row)?;
        let state = (0..d).map(|j| parse_field(&rec, 2 + j, row)).collect::<Result<Vec<f64>>>()?;
        let action: usize = parse_field(&rec, 2 + d, row)?;
        let reward: f64 = parse_field(&rec, 3 + d, row)?;
        let next = (0..d).map(|j| parse_field(&rec, 4 + d + j, row)).collect::<Result<Vec<f64>>>()?;

        if id == trajectories.len() && t == 0 {
            trajectories.push(TrajectoryData {
                states: state.clone(),
                actions: Vec::new(),
                rewards: Vec::new(),
            });
        } else if id + 1 != trajectories.len() {
            return Err(malformed(row, "trajectories must be contiguous and numbered from 0"));
        }
        let tr = trajectories.last_mut().expect("pushed above");
        if t != tr.actions.len() {
            return Err(malformed(row, format!("expected stage {}, found {t}", tr.actions.len())));
        }
        if tr.states[t * d..(t + 1) * d] != state[..] {
            return Err(malformed(row, "state does not match the previous next-state"));
        }
        max_action = max_action.max(action);
        tr.actions.push(action);
        tr.rewards.push(reward);
        tr.states.extend(next);
    }
    let k = num_actions.unwrap_or(max_action + 1);
    TrajectoryBatch::from_trajectories(trajectories, d, k, 0, String::new())
}

/// Little-endian binary form: a 32-byte header (magic, version, n, T, d,
/// num_actions as u32, seed as u64) followed by one row of f64 per transition:
/// `state, action, reward, next_state`.
pub fn write_trajectories_binary<W: Write>(batch: &TrajectoryBatch, mut out: W) -> Result<()> {
    let io_err = |e| Error::io("<binary>", e);
    let mut header = Vec::with_capacity(BINARY_HEADER_LEN);
    header.extend_from_slice(&BINARY_MAGIC);
    for v in [BINARY_VERSION, batch.len() as u32, batch.horizon() as u32, batch.d() as u32, batch.num_actions() as u32] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    header.extend_from_slice(&batch.seed.to_le_bytes());
    out.write_all(&header).map_err(io_err)?;
    let mut buf = Vec::with_capacity((2 * batch.d() + 2) * 8);
    for i in 0..batch.len() {
        for tr in batch.trajectory(i) {
            buf.clear();
            let row = tr
                .state
                .iter()
                .copied()
                .chain([tr.action as f64, tr.reward])
                .chain(tr.next_state.iter().copied());
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn read_trajectories_binary<R: Read>(mut input: R) -> Result<TrajectoryBatch> {
    let mut header = [0u8; BINARY_HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| malformed(0, "truncated header"))?;
    if header[..4] != BINARY_MAGIC {
        return Err(malformed(0, "bad magic"));
    }
    let word = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (version, n, horizon, d, num_actions) = (word(1), word(2), word(3), word(4), word(5));
    if version != BINARY_VERSION as usize {
        return Err(malformed(0, format!("unsupported version {version}")));
    }
    let seed = u64::from_le_bytes(header[24..32].try_into().unwrap());

    let width = 2 * d + 2;
    let mut buf = vec![0u8; width * 8];
    let mut row = vec![0.0; width];
    let mut trajectories = Vec::with_capacity(n);
    for i in 0..n {
        let mut tr = TrajectoryData {
            states: Vec::with_capacity((horizon + 1) * d),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
        };
        for t in 0..horizon {
            let row_no = i * horizon + t + 1;
            input
                .read_exact(&mut buf)
                .map_err(|_| malformed(row_no, "truncated body"))?;
            for (v, chunk) in row.iter_mut().zip(buf.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            if t == 0 {
                tr.states.extend_from_slice(&row[..d]);
            } else if tr.states[t * d..] != row[..d] {
                return Err(malformed(row_no, "state does not match the previous next-state"));
            }
            let action = row[d];
            if !(action >= 0.0 && action.fract() == 0.0) {
                return Err(malformed(row_no, format!("invalid action {action}")));
            }
            tr.actions.push(action as usize);
            tr.rewards.push(row[d + 1]);
            tr.states.extend_from_slice(&row[d + 2..]);
        }
        trajectories.push(tr);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::io("<binary>", e))? != 0 {
        return Err(malformed(n * horizon + 1, "trailing bytes"));
    }
    TrajectoryBatch::from_trajectories(trajectories, d, num_actions, seed, String::new())
}

pub fn save_trajectories(batch: &TrajectoryBatch, path: &Path) -> Result<()> {
    let out = create(path)?;
    if is_binary_path(path) {
        write_trajectories_binary(batch, out)
    } else {
        write_trajectories_csv(batch, out)
    }
}

pub fn load_trajectories(path: &Path, num_actions: Option<usize>) -> Result<TrajectoryBatch> {
    let input = open(path)?;
    if is_binary_path(path) {
        read_trajectories_binary(input)
    } else {
        read_trajectories_csv(input, num_actions)
    }
}

fn is_binary_path(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("bin" | "rfqi"))
}

/// Rows `(t, action, coordinate, coefficient)`; each `(t, action)` block ends
/// with the intercept under the coordinate label `intercept`.
pub fn write_qfun_csv<W: Write>(q: &LinearQ, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "action", "coordinate", "coefficient"])?;
    for (t, stage) in q.stages.iter().enumerate() {
        for a in 0..q.num_actions {
            for (j, c) in stage.coef[a].iter().enumerate() {
                w.write_record([t.to_string(), a.to_string(), j.to_string(), c.to_string()])?;
            }
            w.write_record([
                t.to_string(),
                a.to_string(),
                INTERCEPT_LABEL.to_string(),
                stage.intercept[a].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Inverse of [`write_qfun_csv`]. Supports are recovered as the nonzero
/// coordinates, so a refit that lands on an exact zero loses that index.
pub fn read_qfun_csv<R: Read>(input: R) -> Result<LinearQ> {
    let mut r = csv::Reader::from_reader(input);
    let mut entries: Vec<(usize, usize, Option<usize>, f64)> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let t: usize = parse_field(&rec, 0, row)?;
        let a: usize = parse_field(&rec, 1, row)?;
        let coord = match rec.get(2).map(str::trim) {
            Some(INTERCEPT_LABEL) => None,
            _ => Some(parse_field::<usize>(&rec, 2, row)?),
        };
        let c: f64 = parse_field(&rec, 3, row)?;
        if !c.is_finite() {
            return Err(malformed(row, "non-finite coefficient"));
        }
        entries.push((t, a, coord, c));
    }
    if entries.is_empty() {
        return Err(malformed(0, "no coefficients"));
    }
    let horizon = entries.iter().map(|e| e.0).max().unwrap() + 1;
    let num_actions = entries.iter().map(|e| e.1).max().unwrap() + 1;
    let d = entries.iter().filter_map(|e| e.2).max().map_or(0, |j| j + 1);
    let mut q = LinearQ::zeros(d, num_actions, horizon);
    for &(t, a, coord, c) in &entries {
        match coord {
            Some(j) => q.stages[t].coef[a][j] = c,
            None => q.stages[t].intercept[a] = c,
        }
    }
    for stage in &mut q.stages {
        let StageQ { coef, support, .. } = stage;
        for (a, w) in coef.iter().enumerate() {
            support[a] = SupportSet::new((0..d).filter(|&j| w[j] != 0.0).collect(), d)?;
        }
    }
    Ok(q)
}

pub fn write_diagnostics_csv<W: Write>(diagnostics: &[TimestepDiagnostics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "penalty", "threshold", "support_size", "iterations", "kkt_violation"])?;
    for diag in diagnostics {
        w.write_record([
            diag.t.to_string(),
            diag.penalty_used.to_string(),
            diag.threshold_used.to_string(),
            diag.support_size.to_string(),
            diag.lasso_iterations.to_string(),
            diag.kkt_violation.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Writes `<stem>_coefficients.csv` and `<stem>_diagnostics.csv` into `dir`.
pub fn save_fqi_result(result: &FqiResult, dir: &Path, stem: &str) -> Result<()> {
    write_qfun_csv(&result.qfun, create(&dir.join(format!("{stem}_coefficients.csv")))?)?;
    write_diagnostics_csv(
        &result.per_timestep_diagnostics,
        create(&dir.join(format!("{stem}_diagnostics.csv")))?,
    )
}

pub fn save_spec(spec: &MdpSpec, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(spec.to_json_pretty()?.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_spec(path: &Path) -> Result<MdpSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MdpSpec::from_json(&text)
}
