//! CSV and JSON rendering.

use std::io::Write;

use mprsim::{MetricsReport, ReplicationSummary};
use serde::Serialize;

use crate::sweep::SweepRow;
use crate::CliError;

pub const CSV_HEADER: &str = "swept_value,throughput_mean,throughput_std,delay_mean_us,delay_std_us,eta_mean,eta_std,dropped_mean,replications";

/// `%g` with six significant digits: fixed notation for exponents in
/// [-4, 6), scientific otherwise, trailing zeros removed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string().to_lowercase();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_line(swept: &str, s: &ReplicationSummary) -> String {
    [
        swept.to_string(),
        fmt_sig(s.throughput.mean),
        fmt_sig(s.throughput.std),
        fmt_sig(s.delay_us.mean),
        fmt_sig(s.delay_us.std),
        fmt_sig(s.eta.mean),
        fmt_sig(s.eta.std),
        fmt_sig(s.dropped.mean),
        s.replications.to_string(),
    ]
    .join(",")
}

pub fn write_sweep_csv(rows: &[SweepRow], w: &mut dyn Write) -> Result<(), CliError> {
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", csv_line(&fmt_sig(row.swept_value), &row.summary))?;
    }
    Ok(())
}

/// A single summary in the sweep layout, with an empty `swept_value`.
pub fn write_summary_csv(summary: &ReplicationSummary, w: &mut dyn Write) -> Result<(), CliError> {
    writeln!(w, "{CSV_HEADER}")?;
    writeln!(w, "{}", csv_line("", summary))?;
    Ok(())
}

#[derive(Serialize)]
struct SweepJson<'a> {
    param: String,
    rows: Vec<SweepJsonRow<'a>>,
}

#[derive(Serialize)]
struct SweepJsonRow<'a> {
    swept_value: f64,
    #[serde(flatten)]
    summary: &'a ReplicationSummary,
}

pub fn write_sweep_json(param: &str, rows: &[SweepRow], w: &mut dyn Write) -> Result<(), CliError> {
    let doc = SweepJson {
        param: param.to_string(),
        rows: rows
            .iter()
            .map(|r| SweepJsonRow {
                swept_value: r.swept_value,
                summary: &r.summary,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(&mut *w, &doc)?;
    writeln!(w)?;
    Ok(())
}

#[derive(Serialize)]
struct RunJson<'a> {
    reports: &'a [MetricsReport],
    summary: &'a ReplicationSummary,
}

/// One report as-is; several as `{reports, summary}`.
pub fn write_run_json(
    reports: &[MetricsReport],
    summary: &ReplicationSummary,
    w: &mut dyn Write,
) -> Result<(), CliError> {
    if let [single] = reports {
        serde_json::to_writer_pretty(&mut *w, single)?;
    } else {
        serde_json::to_writer_pretty(&mut *w, &RunJson { reports, summary })?;
    }
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(2.7418234), "2.74182");
        assert_eq!(fmt_sig(8750.0), "8750");
        assert_eq!(fmt_sig(123456.7), "123457");
        assert_eq!(fmt_sig(999999.7), "1e+06");
        assert_eq!(fmt_sig(1234567.0), "1.23457e+06");
        assert_eq!(fmt_sig(0.0001), "0.0001");
        assert_eq!(fmt_sig(0.00001234), "1.234e-05");
        assert_eq!(fmt_sig(-3.5), "-3.5");
        assert_eq!(fmt_sig(4.0), "4");
    }
}
