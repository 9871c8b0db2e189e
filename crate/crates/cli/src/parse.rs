//! Text forms shared by the command line and the HTTP query strings.

use nanoct::aligner::ShiftFill;
use nanoct::Roi;

/// `x,y,w,h` in pixels.
pub fn parse_roi(s: &str) -> Result<Roi, String> {
    let v = numbers::<usize>(s, 4)?;
    Roi::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

/// Inclusive row interval `a:b`.
pub fn parse_rows(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected a:b, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad row {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad row {b:?}"))?;
    if b < a {
        return Err(format!("row range {a}:{b} is reversed"));
    }
    Ok((a, b))
}

/// `dx,dy` as floats.
pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let v = numbers::<f64>(s, 2)?;
    if !(v[0].is_finite() && v[1].is_finite()) {
        return Err(format!("non-finite pair {s:?}"));
    }
    Ok((v[0], v[1]))
}

/// `border`, `edge`, or a constant gray value.
pub fn parse_fill(s: &str) -> Result<ShiftFill, String> {
    match s.to_ascii_lowercase().as_str() {
        "border" | "border_mode" | "border-mode" => Ok(ShiftFill::BorderMode),
        "edge" | "edge_replicate" | "edge-replicate" => Ok(ShiftFill::EdgeReplicate),
        other => other
            .parse::<f32>()
            .ok()
            .filter(|v| v.is_finite())
            .map(ShiftFill::Constant)
            .ok_or_else(|| format!("fill must be border, edge or a number, got {s:?}")),
    }
}

fn numbers<T: std::str::FromStr>(s: &str, n: usize) -> Result<Vec<T>, String> {
    let v: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("cannot parse {s:?}"))?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated values, got {s:?}"));
    }
    Ok(v)
}
