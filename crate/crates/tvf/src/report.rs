//! CSV renderings of evaluation output.

use std::fmt::Write;

use tvf_core::pipeline::EvalReport;

pub const EVAL_HEADER: &str = "kind,object,seed,condition,psnr,ssim,mse,config_hash";
pub const GATING_HEADER: &str = "delta_deg,mean_residual_norm";

/// One `row` line per object and condition, then one `summary` line per
/// condition (object and seed left empty, means in the metric columns).
pub fn eval_csv(report: &EvalReport, config_hash: &str) -> String {
    let mut s = String::from(EVAL_HEADER);
    s.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            s,
            "row,{},{},{},{},{},{},{config_hash}",
            r.object,
            r.seed,
            r.condition.label(),
            r.psnr,
            r.ssim,
            r.mse
        );
    }
    for m in &report.summary {
        let _ = writeln!(s, "summary,,,{},{},{},{},{config_hash}", m.condition.label(), m.psnr, m.ssim, m.mse);
    }
    s
}

pub fn gating_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from(GATING_HEADER);
    s.push('\n');
    for (d, n) in points {
        let _ = writeln!(s, "{d},{n}");
    }
    s
}

/// Parsed `summary` lines of an evaluation CSV: `(condition, psnr, ssim)`.
pub fn parse_summary(csv: &str) -> Vec<(String, f64, f64)> {
    csv.lines()
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 || f[0] != "summary" {
                return None;
            }
            Some((f[3].to_string(), f[4].parse().ok()?, f[5].parse().ok()?))
        })
        .collect()
}
