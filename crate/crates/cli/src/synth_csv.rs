//! CSV export of lagged panels.

use std::fmt::Write as _;

use kcc_core::LaggedPanel;

/// Header `<variable>@<lag>` per column, blocks in declaration order, then
/// lags, then variables. Values use the shortest representation that parses
/// back to the same `f64`.
pub fn panel_to_csv(panel: &LaggedPanel) -> String {
    let mut columns = Vec::new();
    for spec in panel.block_specs() {
        let lags = panel.block(&spec.name).expect("declared block");
        for (l, m) in lags.iter().enumerate() {
            for (j, v) in spec.variables.iter().enumerate() {
                columns.push((format!("{v}@{l}"), m.column(j)));
            }
        }
    }
    let mut s = String::new();
    let header: Vec<&str> = columns.iter().map(|(h, _)| h.as_str()).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for i in 0..panel.rows() {
        for (c, (_, col)) in columns.iter().enumerate() {
            if c > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", col[i]);
        }
        s.push('\n');
    }
    s
}

/// Block specification that regroups an exported panel on ingestion.
pub fn panel_block_spec(panel: &LaggedPanel) -> String {
    panel
        .block_specs()
        .iter()
        .map(|b| format!("{}={}", b.name, b.variables.join(",")))
        .collect::<Vec<_>>()
        .join(";")
}
