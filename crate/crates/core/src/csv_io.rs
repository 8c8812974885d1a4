//! Trajectory CSV files.
//!
//! Columns: `t, x1..xn, u1..um`, the logged fields by name, `margin`,
//! `envelope-bound`. Numbers carry 17 significant digits; absent values are
//! empty cells.

use std::io::{Read, Write};

use crate::delay_state::HistoryWindow;
use crate::error::{Error, Result};
use crate::simulator::{Trajectory, TrajectorySample};

pub const MARGIN_COLUMN: &str = "margin";
pub const ENVELOPE_COLUMN: &str = "envelope-bound";

/// `v0·e^{−ϱt}` written in the envelope column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeColumn {
    pub v0: f64,
    pub rate: f64,
}

pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Csv(format!("line {}: {e}", pos.line())),
        None => Error::Csv(e.to_string()),
    }
}

pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory, envelope: Option<EnvelopeColumn>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let n = traj.samples.first().map_or(0, |s| s.x.len());
    let m = traj.samples.first().map_or(0, |s| s.u.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend(traj.field_names.iter().cloned());
    header.push(MARGIN_COLUMN.into());
    header.push(ENVELOPE_COLUMN.into());
    w.write_record(&header).map_err(csv_err)?;
    let t0 = traj.samples.first().map_or(0.0, |s| s.t);
    for s in &traj.samples {
        let mut row = Vec::with_capacity(header.len());
        row.push(format_number(s.t));
        row.extend(s.x.iter().map(|v| format_number(*v)));
        row.extend(s.u.iter().map(|v| format_number(*v)));
        row.extend(s.fields.iter().map(|v| format_number(*v)));
        row.push(s.margin.map(format_number).unwrap_or_default());
        row.push(
            envelope
                .map(|e| format_number(e.v0 * (-e.rate * (s.t - t0)).exp()))
                .unwrap_or_default(),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::Csv(format!("line {line}: column '{column}' holds '{cell}', not a number")))
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok().filter(|&i| i >= 1)
}

/// Reads a trajectory written by [`write_trajectory`]. The file holds no
/// initial history, so the history is taken to be constant at `x(0)` over
/// `[−delay_horizon, 0]`.
pub fn read_trajectory<R: Read>(input: R, delay_horizon: f64) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Csv("line 1: first column must be 't'".into()));
    }
    let mut xs = Vec::new();
    let mut us = Vec::new();
    let mut fields = Vec::new();
    let mut margin = None;
    for (i, name) in header.iter().enumerate().skip(1) {
        if let Some(k) = indexed(name, 'x') {
            xs.push((k, i));
        } else if let Some(k) = indexed(name, 'u') {
            us.push((k, i));
        } else if name == MARGIN_COLUMN {
            margin = Some(i);
        } else if name == ENVELOPE_COLUMN {
            // derived from the first row; nothing to keep
        } else {
            if name == "t" || fields.iter().any(|(n, _): &(String, usize)| n == name) {
                return Err(Error::Csv(format!("line 1: duplicate column '{name}'")));
            }
            fields.push((name.clone(), i));
        }
    }
    for (cols, what) in [(&mut xs, 'x'), (&mut us, 'u')] {
        cols.sort_unstable();
        if cols.iter().enumerate().any(|(j, (k, _))| *k != j + 1) {
            return Err(Error::Csv(format!("line 1: {what} columns must be numbered 1..n without gaps")));
        }
    }
    if xs.is_empty() {
        return Err(Error::Csv("line 1: no state columns".into()));
    }

    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Csv(format!("line {line}: expected {} cells, found {}", header.len(), rec.len())));
        }
        let get = |i: usize| parse_cell(&rec[i], line, &header[i]);
        let t = get(0)?;
        let x = xs.iter().map(|&(_, i)| get(i)).collect::<Result<Vec<_>>>()?;
        let u = us.iter().map(|&(_, i)| get(i)).collect::<Result<Vec<_>>>()?;
        let f = fields.iter().map(|(_, i)| get(*i)).collect::<Result<Vec<_>>>()?;
        let margin = match margin {
            Some(i) if !rec[i].trim().is_empty() => Some(get(i)?),
            _ => None,
        };
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Csv(format!("line {line}: non-finite time or state")));
        }
        samples.push(TrajectorySample {
            t,
            x,
            xdot: None,
            u,
            fields: f,
            margin,
        });
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::Csv("no data rows".into()))?;
    let step = if samples.len() > 1 { samples[1].t - samples[0].t } else { 0.0 };
    for (k, pair) in samples.windows(2).enumerate() {
        let dt = pair[1].t - pair[0].t;
        if !(dt > 0.0) || (dt - step).abs() > 1e-9 * step.abs().max(1e-300) + 1e-12 {
            return Err(Error::Csv(format!("line {}: time grid is not uniform", k + 3)));
        }
    }
    let history = HistoryWindow::from_constant(&first.x, delay_horizon)
        .map_err(|e| Error::Csv(format!("initial history: {e}")))?
        .samples()
        .map(|(t, x)| (t + first.t, x.to_vec()))
        .collect();
    Ok(Trajectory {
        step,
        delay_horizon,
        history,
        field_names: fields.into_iter().map(|(n, _)| n).collect(),
        samples,
        certificate_violations: 0,
        meta: Default::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{QuadraticField, SharedField};
    use crate::simulator::{integrate, IntegrationSettings};
    use crate::system::LinearDelaySystem;
    use std::sync::Arc;

    fn sample_traj() -> Trajectory {
        let sys = LinearDelaySystem::scalar(-1.0, 0.5, 0.2).unwrap();
        let f: SharedField = Arc::new(QuadraticField::new(vec![vec![1.0]]).unwrap());
        let init = HistoryWindow::from_constant(&[1.0], 0.2).unwrap();
        let settings = IntegrationSettings::new(0.01, 0.5).unwrap().log("V", f);
        integrate(&sys, None, &init, &settings).unwrap()
    }

    #[test]
    fn round_trip_preserves_values_bitwise() {
        let traj = sample_traj();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj, Some(EnvelopeColumn { v0: 1.0, rate: 0.5 })).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,V,margin,envelope-bound\n"));
        assert!(!text.contains('\r'));
        let back = read_trajectory(buf.as_slice(), 0.2).unwrap();
        assert_eq!(back.samples.len(), traj.samples.len());
        for (a, b) in back.samples.iter().zip(&traj.samples) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.x, b.x);
            assert_eq!(a.fields, b.fields);
            assert_eq!(a.margin, None);
        }
        assert_eq!(back.field_names, vec!["V".to_string()]);
        assert!((back.step - 0.01).abs() < 1e-15);
        assert_eq!(back.history.last().unwrap().0, 0.0);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(format_number(0.1), "1.0000000000000001e-1");
        assert_eq!(format_number(-2.0), "-2.0000000000000000e0");
        for v in [std::f64::consts::PI, 1e-300, -7.0e22, 0.3] {
            assert_eq!(format_number(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn rejects_malformed_input() {
        let cases = [
            "",
            "x1\n1\n",
            "t,x2\n0,1\n",
            "t,x1\n0,abc\n",
            "t,x1\n0,1\n0.1,1\n0.3,1\n",
            "t,x1\n0,1,2\n",
            "t,x1,V,V\n0,1,2,3\n",
            "t,x1\n",
            "t,x1\n0,NaN\n",
        ];
        for text in cases {
            assert!(read_trajectory(text.as_bytes(), 0.3).is_err(), "{text:?}");
        }
        let err = read_trajectory("t,x1\n0,1\n0.1,zz\n".as_bytes(), 0.3).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
