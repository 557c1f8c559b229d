//! Writing the report bundle: `report.json`, one CSV per curve and
//! `summary.txt`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::run::ReportBundle;
use crate::CliError;

/// Pretty JSON with every float at 17 significant digits.
struct SigFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SigFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{}", sig17(v))
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// `x` with 17 significant digits in exponent form.
pub fn sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// `x` with 6 significant digits, fixed notation in `[1e-4, 1e6)`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..6).contains(&e) {
        format!("{x:.*}", (5 - e).max(0) as usize)
    } else {
        format!("{x:.5e}")
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(|e| CliError::Io(format!("serializing report: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: &[[f64; 4]]) -> Result<(), CliError> {
    let io_err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r.iter().map(|x| sig17(*x))).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub const SUMMARY_HEADER: [&str; 7] = ["model", "c_sigma", "N_sigma", "lambda", "theta2", "gap", "margin"];

/// Plain-text table; one row when a certificate exists.
pub fn summary_table(b: &ReportBundle) -> String {
    let width = 14;
    let mut out = String::new();
    for h in SUMMARY_HEADER {
        out.push_str(&format!("{h:<width$}"));
    }
    out = out.trim_end().to_string();
    out.push('\n');
    if let Some(c) = &b.certificate {
        let gap = b.measured_gap();
        let cells = [
            b.config.model.name.clone(),
            sig6(c.inputs.c_sigma),
            sig6(c.inputs.n_sigma),
            sig6(c.inputs.lambda),
            sig6(c.theta2),
            gap.map(sig6).unwrap_or_else(|| "-".into()),
            gap.map(|g| sig6(g - c.theta2)).unwrap_or_else(|| "-".into()),
        ];
        let mut row = String::new();
        for cell in cells {
            row.push_str(&format!("{cell:<width$}"));
        }
        out.push_str(row.trim_end());
        out.push('\n');
    }
    out
}

/// Writes the bundle into `dir` and returns the paths written.
pub fn emit(b: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let put = |name: &str, bytes: &[u8], written: &mut Vec<PathBuf>| -> Result<(), CliError> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        written.push(p);
        Ok(())
    };
    put("report.json", &to_json(b)?, &mut written)?;
    if let Some(s) = &b.semigroup {
        for c in &s.curves {
            let p = dir.join(format!("decay_{}.csv", sanitize(&c.label)));
            write_csv(&p, &mlangevin_core::DecayCurve::CSV_HEADER, &c.csv_rows())?;
            written.push(p);
        }
        if let Some(fp) = &s.fokker_planck {
            let p = dir.join("decay_fokker_planck.csv");
            write_csv(&p, &mlangevin_core::DecayCurve::CSV_HEADER, &fp.curve.csv_rows())?;
            written.push(p);
        }
    }
    if let Some(sde) = &b.sde {
        for (label, m) in &sde.mixing {
            let p = dir.join(format!("autocov_{}.csv", sanitize(label)));
            write_csv(&p, &mlangevin_core::sde::MixingCurve::CSV_HEADER, &m.csv_rows())?;
            written.push(p);
        }
    }
    put("summary.txt", summary_table(b).as_bytes(), &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formats() {
        assert_eq!(sig17(0.1), "1.0000000000000001e-1");
        assert_eq!(sig17(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(sig6(0.0073593129), "0.00735931");
        assert_eq!(sig6(0.5), "0.500000");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
        assert_eq!(sig6(-2.0), "-2.00000");
    }

    #[test]
    fn json_floats_round_trip() {
        let v = serde_json::json!({"a": [0.1, 1.0 / 3.0, 1e-300], "b": f64::NAN});
        let bytes = to_json(&v).unwrap();
        let back: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back["a"][1].as_f64().unwrap(), 1.0 / 3.0);
        assert!(back["b"].is_null());
        assert!(String::from_utf8(bytes).unwrap().contains("3.3333333333333331e-1"));
    }
}
