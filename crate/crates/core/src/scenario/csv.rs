use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::integrate::{SimTrace, TraceLayout, TraceMeta};

/// `t, q_1..q_{Nn}, v_1..v_{Nn}, [zeta_1..zeta_{Mn},] tau_1..tau_{Nn}, S`.
pub fn csv_header(layout: &TraceLayout) -> Vec<String> {
    let nn = layout.stacked();
    let mut cols = vec!["t".to_string()];
    for (prefix, count) in [("q", nn), ("v", nn), ("zeta", layout.zeta_len()), ("tau", nn)] {
        cols.extend((1..=count).map(|i| format!("{prefix}_{i}")));
    }
    cols.push("S".to_string());
    cols
}

fn push(line: &mut String, x: f64) {
    use std::fmt::Write as _;
    line.push(',');
    write!(line, "{x:.16e}").expect("write to string");
}

pub fn write_csv<W: Write>(trace: &SimTrace, mut out: W) -> Result<()> {
    trace.validate()?;
    writeln!(out, "{}", csv_header(&trace.layout).join(","))?;
    let mut line = String::new();
    for k in 0..trace.len() {
        line.clear();
        use std::fmt::Write as _;
        write!(line, "{:.16e}", trace.times[k]).expect("write to string");
        for x in trace.states[k].iter().chain(trace.tau[k].iter()) {
            push(&mut line, *x);
        }
        push(&mut line, trace.storage[k]);
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(trace: &SimTrace, path: impl AsRef<Path>) -> Result<()> {
    write_csv(trace, BufWriter::new(File::create(path)?))
}

/// Parses text written by [`write_csv`] for the given layout.
pub fn parse_csv(text: &str, layout: TraceLayout) -> Result<SimTrace> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Csv {
        line: 1,
        message: "missing header".into(),
    })?;
    let expected = csv_header(&layout);
    if header.split(',').ne(expected.iter().map(String::as_str)) {
        return Err(Error::Csv {
            line: 1,
            message: format!("header does not match layout, expected `{}`", expected.join(",")),
        });
    }
    let (sl, nn) = (layout.state_len(), layout.stacked());
    let mut trace = SimTrace {
        layout,
        times: Vec::new(),
        states: Vec::new(),
        tau: Vec::new(),
        storage: Vec::new(),
        meta: TraceMeta::default(),
    };
    for (i, row) in lines.enumerate() {
        let line = i + 2;
        if row.is_empty() {
            continue;
        }
        let values = row
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Csv {
                line,
                message: e.to_string(),
            })?;
        if values.len() != expected.len() {
            return Err(Error::Csv {
                line,
                message: format!("expected {} fields, got {}", expected.len(), values.len()),
            });
        }
        trace.times.push(values[0]);
        trace.states.push(DVector::from_column_slice(&values[1..1 + sl]));
        trace.tau.push(DVector::from_column_slice(&values[1 + sl..1 + sl + nn]));
        trace.storage.push(values[1 + sl + nn]);
    }
    trace.validate()?;
    Ok(trace)
}

pub fn read_csv(path: impl AsRef<Path>, layout: TraceLayout) -> Result<SimTrace> {
    parse_csv(&std::fs::read_to_string(path)?, layout)
}
