//! Text reports for the `gradcheck` and `rf` commands.

use std::fmt::Write;

use disco_core::blocks::{kernel_receptive_field, schedule_receptive_field};
use disco_core::gradcheck::OpReport;
use disco_core::model::ModelConfig;

/// Value given for the six-layer context branch in the source description.
/// The composition rule gives 129 for the same schedule.
pub const STATED_LGCF_RF: usize = 126;

pub fn gradcheck_table(rows: &[OpReport]) -> String {
    let mut s = format!("{:<18} {:>5} {:>14} {:>10}  result\n", "op", "seeds", "max_rel_error", "tolerance");
    for r in rows {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        writeln!(s, "{:<18} {:>5} {:>14.3e} {:>10.0e}  {verdict}", r.op, r.seeds, r.max_rel_error, r.tolerance).unwrap();
    }
    s
}

fn schedule_lines(out: &mut String, label: &str, kernel: usize, dilations: &[usize]) -> usize {
    let per: Vec<String> = dilations.iter().map(|&d| format!("d={d}:{}", kernel_receptive_field(kernel, d))).collect();
    let total = schedule_receptive_field(kernel, dilations);
    writeln!(out, "{label} dilations={dilations:?}").unwrap();
    writeln!(out, "  layer rf  {}", per.join(" ")).unwrap();
    writeln!(out, "  stacked rf {total}").unwrap();
    total
}

/// Per-layer and stacked receptive fields for every dilated block of `cfg`.
pub fn receptive_fields(cfg: &ModelConfig) -> String {
    let mut out = String::new();
    for stage in 0..cfg.encoder_dilations.len() {
        schedule_lines(&mut out, &format!("encoder{}", stage + 1), 3, &cfg.encoder_schedule(stage));
    }
    let lgcf = schedule_lines(&mut out, "lgcf.dense", 3, &cfg.lgcf_dilations);
    if cfg.lgcf_dilations == [1, 3, 6, 12, 18, 24] {
        writeln!(
            out,
            "  note: the stated figure for this branch is {STATED_LGCF_RF}; the composition rule gives {lgcf}"
        )
        .unwrap();
    }
    if !cfg.use_lgcf {
        writeln!(out, "  (branch disabled in this configuration)").unwrap();
    }
    out
}
