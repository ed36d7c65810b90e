use std::fmt::Write;

use serde::Serialize;

use super::pipeline::RunOutcome;
use crate::machsim::Mode;

pub const CSV_HEADER: &str = "kernel,mode,norm_time,norm_energy,access_time,execute_time,overhead_time,access_energy,execute_energy,overhead_energy";

/// One CSV row. Component columns are fractions of the baseline total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub kernel: String,
    pub mode: String,
    pub norm_time: f64,
    pub norm_energy: f64,
    pub access_time: f64,
    pub execute_time: f64,
    pub overhead_time: f64,
    pub access_energy: f64,
    pub execute_energy: f64,
    pub overhead_energy: f64,
}

impl CsvRow {
    pub fn from_outcome(o: &RunOutcome) -> Self {
        let (r, b) = (&o.report, &o.baseline.total);
        let t = |v: u64| v as f64 / b.wall_ps as f64;
        let e = |v: u64| v as f64 / b.energy_pj as f64;
        CsvRow {
            kernel: o.kernel.clone(),
            mode: o.mode.as_str().to_string(),
            norm_time: t(r.total.wall_ps),
            norm_energy: e(r.total.energy_pj),
            access_time: t(r.access.wall_ps),
            execute_time: t(r.execute.wall_ps),
            overhead_time: t(r.overhead.wall_ps),
            access_energy: e(r.access.energy_pj),
            execute_energy: e(r.execute.energy_pj),
            overhead_energy: e(r.overhead.energy_pj),
        }
    }

    fn values(&self) -> [f64; 8] {
        [
            self.norm_time,
            self.norm_energy,
            self.access_time,
            self.execute_time,
            self.overhead_time,
            self.access_energy,
            self.execute_energy,
            self.overhead_energy,
        ]
    }
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Summary rows, one per mode present: geometric means of the normalised
/// totals and arithmetic means of the component columns (which may be 0).
pub fn geomean_rows(rows: &[CsvRow]) -> Vec<CsvRow> {
    let mut out = Vec::new();
    for mode in Mode::ALL {
        let sel: Vec<&CsvRow> = rows.iter().filter(|r| r.mode == mode.as_str()).collect();
        if sel.is_empty() {
            continue;
        }
        let n = sel.len() as f64;
        let geo = |f: fn(&CsvRow) -> f64| (sel.iter().map(|r| f(r).ln()).sum::<f64>() / n).exp();
        let mean = |f: fn(&CsvRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
        out.push(CsvRow {
            kernel: "geomean".into(),
            mode: mode.as_str().into(),
            norm_time: geo(|r| r.norm_time),
            norm_energy: geo(|r| r.norm_energy),
            access_time: mean(|r| r.access_time),
            execute_time: mean(|r| r.execute_time),
            overhead_time: mean(|r| r.overhead_time),
            access_energy: mean(|r| r.access_energy),
            execute_energy: mean(|r| r.execute_energy),
            overhead_energy: mean(|r| r.overhead_energy),
        });
    }
    out
}

pub fn to_csv(rows: &[CsvRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{}", field(&r.kernel), field(&r.mode));
        for v in r.values() {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s
}

/// Whitespace-separated table for stacked-bar plots.
pub fn to_gnuplot(rows: &[CsvRow]) -> String {
    let mut s =
        String::from("# label access_time execute_time overhead_time access_energy execute_energy overhead_energy\n");
    for r in rows {
        let _ = write!(s, "\"{}/{}\"", r.kernel, r.mode);
        for v in &r.values()[2..] {
            let _ = write!(s, " {v:.6}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kernel: &str, mode: Mode, t: f64) -> CsvRow {
        CsvRow {
            kernel: kernel.into(),
            mode: mode.as_str().into(),
            norm_time: t,
            norm_energy: t,
            access_time: 0.0,
            execute_time: t,
            overhead_time: 0.0,
            access_energy: 0.0,
            execute_energy: t,
            overhead_energy: 0.0,
        }
    }

    #[test]
    fn header_and_geomean() {
        let rows = vec![row("a", Mode::StaticDae, 0.5), row("b", Mode::StaticDae, 2.0)];
        let g = geomean_rows(&rows);
        assert_eq!(g.len(), 1);
        assert!((g[0].norm_time - 1.0).abs() < 1e-12);
        let csv = to_csv(&rows);
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.contains("a,static_dae,0.500000,"));
    }
}
