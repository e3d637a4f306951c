use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::CliError;
use crate::model::KeyRateReport;
use crate::planner::SweepPoint;

pub const CSV_HEADER: &str = "distance_km,family,rate_R,mu,nu,frac_signal,frac_weak,frac_vacuum,secure";

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        let b = &p.best_protocol;
        let nu = b.nu.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{:e},{},{},{},{},{},{}",
            p.distance_km, p.family, p.best_rate, b.mu, nu, b.frac_signal, b.frac_weak, b.frac_vacuum, p.secure
        );
    }
    out
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| CliError::Write {
        path: path.display().to_string(),
        message: "not a file path".into(),
    })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    let result = (|| {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(fail)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"))
}

pub fn describe_report(report: &KeyRateReport) -> String {
    let mut s = String::new();
    let p = &report.protocol;
    let _ = writeln!(s, "family          {}", report.family);
    let _ = writeln!(
        s,
        "intensities     mu = {}{}",
        p.mu,
        p.nu.map(|nu| format!(", nu = {nu}")).unwrap_or_default()
    );
    let _ = writeln!(
        s,
        "fractions       signal {} / weak {} / vacuum {}",
        p.frac_signal, p.frac_weak, p.frac_vacuum
    );
    let _ = writeln!(
        s,
        "session         N = {}, u_alpha = {}",
        report.plan.total_pulses_n, report.plan.u_alpha
    );
    let _ = writeln!(s, "rate_lower_R    {:.6e} bits/pulse", report.rate_lower);
    let _ = writeln!(s, "key_length_L    {} bits", report.key_length);
    let _ = writeln!(s, "secure          {}", report.secure);
    if let Some(reason) = &report.no_key_reason {
        let _ = writeln!(s, "no key          {reason}");
    }
    let b = &report.bounds;
    let _ = writeln!(s, "Q1_lower        {:.6e}", b.q1_lower);
    let _ = writeln!(s, "e1_upper        {}", opt(b.e1_upper));
    let _ = writeln!(s, "Qnu_lower       {}", opt(b.qnu_lower));
    let _ = writeln!(s, "Y0 bounds       [{}, {}]", opt(b.y0_lower), opt(b.y0_upper));
    for note in &report.notes {
        let _ = writeln!(s, "note: {note}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProtocolFamily, ProtocolSpec};

    #[test]
    fn csv_rows_follow_the_header() {
        let points = [
            SweepPoint {
                distance_km: 15.0,
                family: ProtocolFamily::OneDecoy,
                best_rate: 6.38e-4,
                best_protocol: ProtocolSpec::one_decoy(0.5, 0.177, 0.12),
                secure: true,
            },
            SweepPoint {
                distance_km: 16.0,
                family: ProtocolFamily::NoDecoy,
                best_rate: -1e-5,
                best_protocol: ProtocolSpec::no_decoy(0.013),
                secure: false,
            },
        ];
        let csv = sweep_csv(&points);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "15,ONE_DECOY,6.38e-4,0.5,0.177,0.88,0.12,0,true");
        assert_eq!(lines[2], "16,NO_DECOY,-1e-5,0.013,,1,0,0,false");
        for line in &lines {
            assert_eq!(line.split(',').count(), 9);
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
