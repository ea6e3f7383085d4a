//! Event CSV files.
//!
//! ```text
//! t_ms,lax_g,lay_g,laz_g,wvx_rps,wvy_rps,wvz_rps
//! -50.0,...
//! ...
//! 149.0,...
//! ```
//!
//! Linear acceleration is stored in g and angular velocity in rad/s; angular
//! acceleration is re-derived on load with central differences.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DerivativeScheme, KinematicSignal, STANDARD_GRAVITY, TRIGGER_INDEX, WINDOW_LEN};
use crate::error::{Error, Result};

pub const EVENT_HEADER: &str = "t_ms,lax_g,lay_g,laz_g,wvx_rps,wvy_rps,wvz_rps";
const COLUMNS: [&str; 7] = ["t_ms", "lax_g", "lay_g", "laz_g", "wvx_rps", "wvy_rps", "wvz_rps"];

fn time_ms(i: usize) -> f64 {
    i as f64 - TRIGGER_INDEX as f64
}

pub fn write_event_string(signal: &KinematicSignal) -> String {
    let mut out = String::with_capacity(WINDOW_LEN * 96);
    out.push_str(EVENT_HEADER);
    out.push('\n');
    let lin = signal.lin_acc();
    let vel = signal.ang_vel();
    for i in 0..WINDOW_LEN {
        // `{}` on f64 prints the shortest representation that parses back exactly.
        let _ = writeln!(
            out,
            "{:.1},{},{},{},{},{},{}",
            time_ms(i),
            lin[0][i] / STANDARD_GRAVITY,
            lin[1][i] / STANDARD_GRAVITY,
            lin[2][i] / STANDARD_GRAVITY,
            vel[0][i],
            vel[1][i],
            vel[2][i]
        );
    }
    out
}

pub fn write_event_file(signal: &KinematicSignal, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_event_string(signal)).map_err(|e| Error::file(path, e))
}

pub fn parse_event_file(path: impl AsRef<Path>) -> Result<KinematicSignal> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_event_str(&text, path)
}

/// Parses event text; `origin` is only used to label errors.
pub fn parse_event_str(text: &str, origin: &Path) -> Result<KinematicSignal> {
    let err = |row: usize, column: &str, message: String| Error::Parse {
        path: origin.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "header", "empty file".into()))?;
    let header_cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if header_cols.len() != COLUMNS.len() {
        return Err(err(
            1,
            "header",
            format!("expected {} columns, found {}", COLUMNS.len(), header_cols.len()),
        ));
    }
    if let Some((got, want)) = header_cols.iter().zip(COLUMNS).find(|(g, w)| *g != w) {
        return Err(err(1, want, format!("expected column `{want}`, found `{got}`")));
    }

    let mut lin = [[0.0; WINDOW_LEN]; 3];
    let mut vel = [[0.0; WINDOW_LEN]; 3];
    let mut rows = 0usize;
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        if rows >= WINDOW_LEN {
            let extra = text.lines().skip(line_idx).filter(|l| !l.trim().is_empty()).count();
            return Err(err(
                line_no,
                "t_ms",
                format!("expected {WINDOW_LEN} rows, found {}", WINDOW_LEN + extra),
            ));
        }
        let cells: Vec<&str> = line.trim().split(',').collect();
        if cells.len() != COLUMNS.len() {
            return Err(err(
                line_no,
                "row",
                format!("expected {} columns, found {}", COLUMNS.len(), cells.len()),
            ));
        }
        let mut values = [0.0; 7];
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| err(line_no, COLUMNS[c], format!("non-numeric value `{}`", cell.trim())))?;
            if !v.is_finite() {
                return Err(err(line_no, COLUMNS[c], format!("non-finite value `{}`", cell.trim())));
            }
            values[c] = v;
        }
        if (values[0] - time_ms(rows)).abs() > 1e-6 {
            return Err(err(
                line_no,
                "t_ms",
                format!("expected t_ms {:.1}, found {}", time_ms(rows), values[0]),
            ));
        }
        for axis in 0..3 {
            lin[axis][rows] = values[1 + axis] * STANDARD_GRAVITY;
            vel[axis][rows] = values[4 + axis];
        }
        rows += 1;
    }
    if rows != WINDOW_LEN {
        return Err(err(
            rows + 2,
            "t_ms",
            format!("expected {WINDOW_LEN} rows, found {rows}"),
        ));
    }
    KinematicSignal::from_kinematics(lin, vel, DerivativeScheme::Central)
}
